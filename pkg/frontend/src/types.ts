export type Plane = 'axial' | 'coronal' | 'sagittal';

export interface RatedBy {
  rater_id: string;
  round: number;
}

export interface PairEntry {
  pair_id: string;
  synthetic_id: string;
  training_id: string;
  queue_rank: number;
  rated_by: RatedBy[];
  needs_round2?: boolean;
}

export interface VolumeMeta {
  id: string;
  dims: [number, number, number];
  spacing: [number, number, number];
  intensity_min: number;
  intensity_max: number;
}

export interface IntensityWindow {
  lo: number;
  hi: number;
}

export interface Progress {
  total_pairs: number;
  registered_raters: string[];
  raters: Record<string, { round_1: number; round_2: number }>;
}

export interface RevealEntry {
  pair_id: string;
  queue_rank: number;
  measure: string;
  value: number;
}

export interface ViewerState {
  pairId: string | null;
  plane: Plane;
  sliceIndex: number; // shared by both panes
  syntheticWindow: IntensityWindow;
  trainingWindow: IntensityWindow;
  raterId: string;
  round: number;
}
