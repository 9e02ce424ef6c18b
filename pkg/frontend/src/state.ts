// Pure queue and viewer-state logic, kept free of DOM and network access so
// the protocol rules are unit-testable.

import type {
  IntensityWindow,
  PairEntry,
  Plane,
  Progress,
  ViewerState,
  VolumeMeta,
} from './types.js';

export function hasRated(pair: PairEntry, raterId: string, round: number): boolean {
  return pair.rated_by.some((r) => r.rater_id === raterId && r.round === round);
}

/** Pairs still to rate for this rater and round, in queue_rank order. */
export function pendingPairs(
  pairs: PairEntry[],
  raterId: string,
  round: number,
): PairEntry[] {
  const ordered = [...pairs].sort((a, b) => a.queue_rank - b.queue_rank);
  return ordered.filter((p) => {
    if (round === 2 && !p.needs_round2) return false;
    return !hasRated(p, raterId, round);
  });
}

/** Skipped pairs return to the queue tail; order of the rest is unchanged. */
export function skipToTail(queue: PairEntry[], pairId: string): PairEntry[] {
  const index = queue.findIndex((p) => p.pair_id === pairId);
  if (index < 0) return queue;
  const next = queue.slice();
  const [skipped] = next.splice(index, 1);
  next.push(skipped);
  return next;
}

export function sliceExtent(meta: VolumeMeta, plane: Plane): number {
  const [nx, ny, nz] = meta.dims;
  return plane === 'axial' ? nz : plane === 'coronal' ? ny : nx;
}

export function clampSliceIndex(index: number, extent: number): number {
  if (!Number.isFinite(index)) return 0;
  return Math.min(Math.max(Math.round(index), 0), extent - 1);
}

/** Both panes always show the same plane and index; extent is their minimum. */
export function sharedExtent(a: VolumeMeta, b: VolumeMeta, plane: Plane): number {
  return Math.min(sliceExtent(a, plane), sliceExtent(b, plane));
}

export function defaultWindow(meta: VolumeMeta): IntensityWindow {
  return { lo: meta.intensity_min, hi: meta.intensity_max };
}

export function initialViewerState(
  raterId: string,
  round: number,
  pair: PairEntry | null,
  syntheticMeta: VolumeMeta | null,
  trainingMeta: VolumeMeta | null,
): ViewerState {
  const plane: Plane = 'axial';
  let index = 0;
  if (syntheticMeta && trainingMeta) {
    index = Math.floor(sharedExtent(syntheticMeta, trainingMeta, plane) / 2);
  }
  return {
    pairId: pair ? pair.pair_id : null,
    plane,
    sliceIndex: index,
    syntheticWindow: syntheticMeta
      ? defaultWindow(syntheticMeta)
      : { lo: 0, hi: 1 },
    trainingWindow: trainingMeta ? defaultWindow(trainingMeta) : { lo: 0, hi: 1 },
    raterId,
    round,
  };
}

export function roundComplete(
  progress: Progress,
  raterId: string,
  round: number,
): boolean {
  const counts = progress.raters[raterId];
  if (!counts) return false;
  const done = round === 1 ? counts.round_1 : counts.round_2;
  return progress.total_pairs > 0 && done >= progress.total_pairs;
}
