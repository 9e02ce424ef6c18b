// DOM construction for the rating screen. Rendering is whitelist-based: the
// pair view shows image ids and slices only, never numeric fields from the
// pair payload, so raters stay blinded to measure values during scoring.

import { sliceUrl } from './api.js';
import { sharedExtent } from './state.js';
import type {
  PairEntry,
  Plane,
  Progress,
  RevealEntry,
  ViewerState,
  VolumeMeta,
} from './types.js';

export const LIKERT_CAPTIONS: Readonly<Record<number, string>> = {
  1: 'Certainly not a Replica',
  2: 'Probably not a replica',
  3: 'Probably a Replica',
  4: 'Certainly Replica',
};

export const PLANES: Plane[] = ['axial', 'coronal', 'sagittal'];

export interface PairViewHandlers {
  onScore(score: number): void;
  onSkip(): void;
  onSliceChange(index: number): void;
  onPlaneChange(plane: Plane): void;
  onWindowChange(pane: 'synthetic' | 'training', lo: number, hi: number): void;
  onImageError(volumeId: string): void;
}

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

function pane(
  baseUrl: string,
  label: string,
  volumeId: string,
  state: ViewerState,
  window: { lo: number; hi: number },
  paneKey: 'synthetic' | 'training',
  handlers: PairViewHandlers,
): HTMLElement {
  const wrap = el('div', `pane pane-${paneKey}`);
  wrap.appendChild(el('h3', 'pane-label', `${label}: ${volumeId}`));
  const img = el('img', 'slice');
  img.alt = `${label} slice`;
  img.addEventListener('error', () => handlers.onImageError(volumeId));
  img.src = sliceUrl(baseUrl, volumeId, state.plane, state.sliceIndex, window);
  wrap.appendChild(img);

  const controls = el('div', 'window-controls');
  const lo = el('input') as HTMLInputElement;
  lo.type = 'number';
  lo.step = 'any';
  lo.value = String(window.lo);
  lo.setAttribute('aria-label', `${label} window low`);
  const hi = el('input') as HTMLInputElement;
  hi.type = 'number';
  hi.step = 'any';
  hi.value = String(window.hi);
  hi.setAttribute('aria-label', `${label} window high`);
  const apply = () =>
    handlers.onWindowChange(paneKey, Number(lo.value), Number(hi.value));
  lo.addEventListener('change', apply);
  hi.addEventListener('change', apply);
  controls.append(el('span', undefined, 'window'), lo, hi);
  wrap.appendChild(controls);
  return wrap;
}

export function renderPairView(
  root: HTMLElement,
  baseUrl: string,
  pair: PairEntry,
  syntheticMeta: VolumeMeta,
  trainingMeta: VolumeMeta,
  state: ViewerState,
  handlers: PairViewHandlers,
): void {
  root.replaceChildren();
  const view = el('div', 'pair-view');

  const panes = el('div', 'panes');
  panes.appendChild(
    pane(
      baseUrl,
      'Synthetic',
      pair.synthetic_id,
      state,
      state.syntheticWindow,
      'synthetic',
      handlers,
    ),
  );
  panes.appendChild(
    pane(
      baseUrl,
      'Training',
      pair.training_id,
      state,
      state.trainingWindow,
      'training',
      handlers,
    ),
  );
  view.appendChild(panes);

  const nav = el('div', 'slice-nav');
  const planeSelect = el('select') as HTMLSelectElement;
  planeSelect.setAttribute('aria-label', 'plane');
  for (const plane of PLANES) {
    const option = el('option', undefined, plane) as HTMLOptionElement;
    option.value = plane;
    option.selected = plane === state.plane;
    planeSelect.appendChild(option);
  }
  planeSelect.addEventListener('change', () =>
    handlers.onPlaneChange(planeSelect.value as Plane),
  );
  nav.appendChild(planeSelect);

  const extent = sharedExtent(syntheticMeta, trainingMeta, state.plane);
  const slider = el('input', 'slice-slider') as HTMLInputElement;
  slider.type = 'range';
  slider.min = '0';
  slider.max = String(extent - 1);
  slider.value = String(state.sliceIndex);
  slider.setAttribute('aria-label', 'slice index');
  slider.addEventListener('input', () =>
    handlers.onSliceChange(Number(slider.value)),
  );
  nav.appendChild(slider);
  nav.appendChild(
    el('span', 'slice-position', `slice ${state.sliceIndex + 1}/${extent}`),
  );
  view.appendChild(nav);

  const scoring = el('div', 'likert');
  for (const score of [1, 2, 3, 4]) {
    const button = el('button', 'likert-button');
    button.appendChild(el('span', 'likert-score', String(score)));
    button.appendChild(el('span', 'likert-caption', LIKERT_CAPTIONS[score]));
    button.addEventListener('click', () => handlers.onScore(score));
    scoring.appendChild(button);
  }
  const skip = el('button', 'skip-button', 'Skip for now');
  skip.addEventListener('click', () => handlers.onSkip());
  scoring.appendChild(skip);
  view.appendChild(scoring);

  root.appendChild(view);
}

export function renderProgress(
  root: HTMLElement,
  progress: Progress,
  raterId: string,
  round: number,
  remaining: number,
): void {
  const counts = progress.raters[raterId] ?? { round_1: 0, round_2: 0 };
  const done = round === 1 ? counts.round_1 : counts.round_2;
  root.replaceChildren(
    el(
      'span',
      'progress-line',
      `rater ${raterId} · round ${round} · ${done}/${progress.total_pairs} rated · ${remaining} in queue`,
    ),
  );
}

export function renderError(root: HTMLElement, message: string): void {
  root.replaceChildren(el('span', 'inline-error', message));
}

export function renderRetryBanner(root: HTMLElement, onRetry: () => void): void {
  const banner = el('div', 'retry-banner');
  banner.appendChild(
    el('span', undefined, 'Connection problem; your rating is kept locally.'),
  );
  const button = el('button', 'retry-button', 'Retry');
  button.addEventListener('click', onRetry);
  banner.appendChild(button);
  root.replaceChildren(banner);
}

export function renderDone(root: HTMLElement, round: number, onReveal: () => void): void {
  const wrap = el('div', 'round-done');
  wrap.appendChild(el('h2', undefined, `Round ${round} complete`));
  wrap.appendChild(
    el('p', undefined, 'All queued pairs are rated. Thank you.'),
  );
  const reveal = el('button', 'reveal-button', 'Reveal measure values');
  reveal.addEventListener('click', onReveal);
  wrap.appendChild(reveal);
  root.replaceChildren(wrap);
}

export function renderReveal(root: HTMLElement, entries: RevealEntry[]): void {
  const table = el('table', 'reveal-table');
  const head = el('tr');
  for (const column of ['rank', 'pair', 'measure', 'value']) {
    head.appendChild(el('th', undefined, column));
  }
  table.appendChild(head);
  for (const entry of entries) {
    const row = el('tr');
    row.appendChild(el('td', undefined, String(entry.queue_rank)));
    row.appendChild(el('td', undefined, entry.pair_id));
    row.appendChild(el('td', undefined, entry.measure));
    row.appendChild(el('td', undefined, entry.value.toFixed(6)));
    table.appendChild(row);
  }
  root.appendChild(table);
}
