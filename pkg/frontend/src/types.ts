// Wire types for the annotation backend endpoints. The UI never computes
// metrics: every statistic shown comes verbatim from these payloads.

export type Label = "antisemitic" | "islamophobic" | "irrelevant";

export interface Progress {
  labeled: number;
  total: number;
}

export interface QueueItemView {
  item_id: string;
  kind: "phrase" | "image-pair";
  phrase_text: string;
  cosine: number | null;
  multi_target: boolean;
}

export interface QueueNextResponse {
  done: boolean;
  progress: Progress;
  item?: QueueItemView;
}

export interface AgreementResponse {
  available: boolean;
  n_items?: number;
  percent_agreement?: number;
  kappa?: number;
  confusion?: Record<string, Record<string, number>>;
}

export interface SweepPoint {
  threshold: number;
  mean: Record<string, number>;
  std: Record<string, number>;
}

export interface SweepResponse {
  available: boolean;
  n_pairs?: number;
  selected_threshold?: number;
  thresholds?: SweepPoint[];
}

export interface ItemPayload {
  item_id: string;
  kind: string;
  phrase_id: string;
  phrase_text: string;
  cosine?: number;
  image_b64?: string;
  media_type?: string;
}

export type SubmitResult =
  | { ok: true; nLabels: number }
  | { ok: false; conflict: boolean; message: string };
