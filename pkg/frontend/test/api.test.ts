import { describe, expect, it, vi } from 'vitest';

import { ApiClient, ApiError, sliceUrl } from '../src/api.js';

function jsonResponse(body: unknown, status = 200): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { 'content-type': 'application/json' },
  });
}

describe('sliceUrl', () => {
  it('encodes plane, index, and window', () => {
    const url = sliceUrl('http://x', 'vol 1', 'coronal', 7, { lo: -1, hi: 2.5 });
    expect(url).toBe(
      'http://x/api/volumes/vol%201/slice?plane=coronal&index=7&lo=-1&hi=2.5',
    );
  });

  it('omits the window when not given', () => {
    expect(sliceUrl('', 'v', 'axial', 0)).toBe(
      '/api/volumes/v/slice?plane=axial&index=0',
    );
  });
});

describe('ApiClient', () => {
  it('fetches and parses pairs', async () => {
    const fetchFn = vi.fn().mockResolvedValue(
      jsonResponse([{ pair_id: 'a::b', queue_rank: 1 }]),
    );
    const client = new ApiClient('http://svc', fetchFn as unknown as typeof fetch);
    const pairs = await client.pairs();
    expect(fetchFn).toHaveBeenCalledWith('http://svc/api/pairs');
    expect(pairs[0].pair_id).toBe('a::b');
  });

  it('submits ratings with the exact payload', async () => {
    const fetchFn = vi.fn().mockResolvedValue(new Response('{}', { status: 201 }));
    const client = new ApiClient('', fetchFn as unknown as typeof fetch);
    await client.submitRating('a::b', 'alice', 4, 1);
    const [, init] = fetchFn.mock.calls[0];
    expect(JSON.parse((init as RequestInit).body as string)).toEqual({
      pair_id: 'a::b',
      rater_id: 'alice',
      score: 4,
      round: 1,
    });
  });

  it('raises ApiError with status and server message on rejection', async () => {
    // fresh Response per call: bodies are single-use
    const fetchFn = vi
      .fn()
      .mockImplementation(async () =>
        jsonResponse({ error: 'score must be in [1, 4]' }, 400),
      );
    const client = new ApiClient('', fetchFn as unknown as typeof fetch);
    let caught: unknown;
    try {
      await client.submitRating('a::b', 'alice', 5, 1);
    } catch (error) {
      caught = error;
    }
    expect(caught).toBeInstanceOf(ApiError);
    expect((caught as ApiError).status).toBe(400);
    expect((caught as ApiError).message).toBe('score must be in [1, 4]');
  });

  it('propagates 403 from the reveal endpoint', async () => {
    const fetchFn = vi
      .fn()
      .mockResolvedValue(jsonResponse({ error: 'not yet' }, 403));
    const client = new ApiClient('', fetchFn as unknown as typeof fetch);
    await expect(client.reveal()).rejects.toMatchObject({ status: 403 });
  });
});
