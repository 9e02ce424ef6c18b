import type {
  IntensityWindow,
  PairEntry,
  Plane,
  Progress,
  RevealEntry,
  VolumeMeta,
} from './types.js';

export class ApiError extends Error {
  constructor(
    readonly status: number,
    message: string,
  ) {
    super(message);
  }
}

async function readError(resp: Response): Promise<string> {
  try {
    const body = (await resp.json()) as { error?: string };
    return body.error ?? resp.statusText;
  } catch {
    return resp.statusText;
  }
}

export function sliceUrl(
  baseUrl: string,
  volumeId: string,
  plane: Plane,
  index: number,
  window?: IntensityWindow,
): string {
  const params = new URLSearchParams({ plane, index: String(index) });
  if (window) {
    params.set('lo', String(window.lo));
    params.set('hi', String(window.hi));
  }
  return `${baseUrl}/api/volumes/${encodeURIComponent(volumeId)}/slice?${params}`;
}

export class ApiClient {
  constructor(
    readonly baseUrl: string = '',
    private readonly fetchFn: typeof fetch = fetch,
  ) {}

  private async getJson<T>(path: string): Promise<T> {
    const resp = await this.fetchFn(`${this.baseUrl}${path}`);
    if (!resp.ok) throw new ApiError(resp.status, await readError(resp));
    return (await resp.json()) as T;
  }

  pairs(): Promise<PairEntry[]> {
    return this.getJson<PairEntry[]>('/api/pairs');
  }

  volumeMeta(volumeId: string): Promise<VolumeMeta> {
    return this.getJson<VolumeMeta>(
      `/api/volumes/${encodeURIComponent(volumeId)}/meta`,
    );
  }

  progress(): Promise<Progress> {
    return this.getJson<Progress>('/api/progress');
  }

  reveal(): Promise<RevealEntry[]> {
    return this.getJson<RevealEntry[]>('/api/reveal');
  }

  async submitRating(
    pairId: string,
    raterId: string,
    score: number,
    round: number,
  ): Promise<void> {
    const resp = await this.fetchFn(`${this.baseUrl}/api/ratings`, {
      method: 'POST',
      headers: { 'content-type': 'application/json' },
      body: JSON.stringify({
        pair_id: pairId,
        rater_id: raterId,
        score,
        round,
      }),
    });
    if (resp.status !== 201) throw new ApiError(resp.status, await readError(resp));
  }
}
