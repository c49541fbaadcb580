/**
 * Wire contract of the /v1 service API. Field names match the JSON
 * exactly; nothing here is invented client-side.
 */

export interface ClassEntry {
  label: string;
  object_count: number;
}

export interface ClassesResponse {
  classes: ClassEntry[];
  image_count: number;
  object_count: number;
  dim: number;
  encoder_id: string;
}

export type SearchMode = "object" | "full";

export interface SearchRequestBody {
  class: string | null;
  text: string;
  k: number;
  mode: SearchMode;
  min_confidence?: number;
}

export type BBox = [number, number, number, number];

export interface SearchRow {
  image_id: string;
  score: number;
  best_object_index: number | null;
  bbox: BBox | null;
}

export interface SearchResponse {
  results: SearchRow[];
  exhausted: boolean;
  query_id: string;
}

export type Verdict = "true_positive" | "false_positive";

export interface JudgmentRequestBody {
  query_id: string;
  image_id: string;
  verdict: Verdict;
  judge: string;
}

export interface JudgmentAck {
  status: string;
  query_id: string;
  ts: number;
}

export interface CurveResponse {
  query_id: string;
  n: number;
  curve: number[];
}

export interface ErrorDetail {
  message: string;
  valid_classes?: string[];
}
