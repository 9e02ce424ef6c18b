import { ApiClient, ApiError } from './api.js';
import {
  clampSliceIndex,
  initialViewerState,
  pendingPairs,
  roundComplete,
  sharedExtent,
  skipToTail,
} from './state.js';
import {
  renderDone,
  renderError,
  renderPairView,
  renderProgress,
  renderRetryBanner,
  renderReveal,
} from './view.js';
import type { PairEntry, Plane, ViewerState, VolumeMeta } from './types.js';

const api = new ApiClient('');

interface PendingSubmit {
  pairId: string;
  score: number;
}

class RatingApp {
  private queue: PairEntry[] = [];
  private state!: ViewerState;
  private syntheticMeta: VolumeMeta | null = null;
  private trainingMeta: VolumeMeta | null = null;
  private pendingSubmit: PendingSubmit | null = null; // kept until the POST lands

  constructor(
    private readonly raterId: string,
    private readonly round: number,
    private readonly viewRoot: HTMLElement,
    private readonly progressRoot: HTMLElement,
    private readonly noticeRoot: HTMLElement,
  ) {}

  async start(): Promise<void> {
    await this.refreshQueue();
    await this.showCurrent();
  }

  private async refreshQueue(): Promise<void> {
    const pairs = await api.pairs();
    this.queue = pendingPairs(pairs, this.raterId, this.round);
  }

  private currentPair(): PairEntry | null {
    return this.queue.length ? this.queue[0] : null;
  }

  private async showCurrent(): Promise<void> {
    this.noticeRoot.replaceChildren();
    const pair = this.currentPair();
    const progress = await api.progress();
    renderProgress(
      this.progressRoot,
      progress,
      this.raterId,
      this.round,
      this.queue.length,
    );
    if (!pair) {
      if (roundComplete(progress, this.raterId, this.round)) {
        renderDone(this.viewRoot, this.round, () => this.reveal());
      } else {
        this.viewRoot.replaceChildren();
        renderError(
          this.noticeRoot,
          'No pairs left in your queue for this round.',
        );
      }
      return;
    }
    try {
      [this.syntheticMeta, this.trainingMeta] = await Promise.all([
        api.volumeMeta(pair.synthetic_id),
        api.volumeMeta(pair.training_id),
      ]);
    } catch {
      renderRetryBanner(this.noticeRoot, () => void this.showCurrent());
      return;
    }
    this.state = initialViewerState(
      this.raterId,
      this.round,
      pair,
      this.syntheticMeta,
      this.trainingMeta,
    );
    this.renderCurrent(pair);
  }

  private renderCurrent(pair: PairEntry): void {
    if (!this.syntheticMeta || !this.trainingMeta) return;
    renderPairView(
      this.viewRoot,
      '',
      pair,
      this.syntheticMeta,
      this.trainingMeta,
      this.state,
      {
        onScore: (score) => void this.submit(pair, score),
        onSkip: () => {
          this.queue = skipToTail(this.queue, pair.pair_id);
          void this.showCurrent();
        },
        onSliceChange: (index) => {
          const extent = sharedExtent(
            this.syntheticMeta!,
            this.trainingMeta!,
            this.state.plane,
          );
          this.state.sliceIndex = clampSliceIndex(index, extent);
          this.renderCurrent(pair);
        },
        onPlaneChange: (plane: Plane) => {
          this.state.plane = plane;
          const extent = sharedExtent(
            this.syntheticMeta!,
            this.trainingMeta!,
            plane,
          );
          this.state.sliceIndex = clampSliceIndex(
            Math.floor(extent / 2),
            extent,
          );
          this.renderCurrent(pair);
        },
        onWindowChange: (paneKey, lo, hi) => {
          if (!(hi > lo)) {
            renderError(this.noticeRoot, 'window must satisfy low < high');
            return;
          }
          if (paneKey === 'synthetic') this.state.syntheticWindow = { lo, hi };
          else this.state.trainingWindow = { lo, hi };
          this.renderCurrent(pair);
        },
        onImageError: () => {
          renderRetryBanner(this.noticeRoot, () => this.renderCurrent(pair));
        },
      },
    );
  }

  private async submit(pair: PairEntry, score: number): Promise<void> {
    this.pendingSubmit = { pairId: pair.pair_id, score };
    try {
      await api.submitRating(pair.pair_id, this.raterId, score, this.round);
    } catch (error) {
      if (error instanceof ApiError) {
        // validation or duplicate: surface it inline, do not advance
        renderError(this.noticeRoot, `rejected (${error.status}): ${error.message}`);
        this.pendingSubmit = null;
        if (error.status === 409) {
          await this.refreshQueue();
          await this.showCurrent();
        }
        return;
      }
      // network failure: rating stays local, retried on demand
      renderRetryBanner(this.noticeRoot, () => void this.retryPending(pair));
      return;
    }
    this.pendingSubmit = null;
    this.queue = this.queue.filter((p) => p.pair_id !== pair.pair_id);
    await this.showCurrent();
  }

  private async retryPending(pair: PairEntry): Promise<void> {
    if (!this.pendingSubmit) return void this.showCurrent();
    await this.submit(pair, this.pendingSubmit.score);
  }

  private async reveal(): Promise<void> {
    try {
      const entries = await api.reveal();
      renderReveal(this.viewRoot, entries);
    } catch (error) {
      const message =
        error instanceof ApiError && error.status === 403
          ? 'Reveal unlocks once both raters finish round 1.'
          : 'Could not load reveal data.';
      renderError(this.noticeRoot, message);
    }
  }
}

function bootstrap(): void {
  const form = document.querySelector<HTMLFormElement>('#session-form');
  const viewRoot = document.querySelector<HTMLElement>('#pair-view');
  const progressRoot = document.querySelector<HTMLElement>('#progress');
  const noticeRoot = document.querySelector<HTMLElement>('#notice');
  if (!form || !viewRoot || !progressRoot || !noticeRoot) return;

  const params = new URLSearchParams(window.location.search);
  const raterInput = form.querySelector<HTMLInputElement>('#rater-id')!;
  const roundSelect = form.querySelector<HTMLSelectElement>('#round')!;
  if (params.get('rater')) raterInput.value = params.get('rater')!;
  if (params.get('round')) roundSelect.value = params.get('round')!;

  form.addEventListener('submit', (event) => {
    event.preventDefault();
    const raterId = raterInput.value.trim();
    if (!raterId) {
      renderError(noticeRoot, 'enter a rater id first');
      return;
    }
    const app = new RatingApp(
      raterId,
      Number(roundSelect.value),
      viewRoot,
      progressRoot,
      noticeRoot,
    );
    void app.start().catch(() => {
      renderRetryBanner(noticeRoot, () => void app.start());
    });
  });
}

bootstrap();
