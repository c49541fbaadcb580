/**
 * Application state and its transitions, kept pure for testability.
 *
 * The one rule that matters: a verdict enters `judgments` only after
 * the server acknowledged the append. Until then it sits in `pending`
 * and the UI may show a spinner, never a checkmark.
 */

import type { ClassEntry, SearchRow, Verdict } from "./types.js";

export interface ActiveSearch {
  queryId: string;
  classLabel: string | null;
  text: string;
  mode: string;
  k: number;
  results: SearchRow[];
  exhausted: boolean;
}

export interface Baseline {
  name: string;
  curve: number[];
}

export interface AppState {
  classes: ClassEntry[];
  imageCount: number;
  objectCount: number;
  search: ActiveSearch | null;
  /** image_id -> verdict, server-confirmed only */
  judgments: Record<string, Verdict>;
  /** image_id -> verdict awaiting server acknowledgement */
  pending: Record<string, Verdict>;
  curve: number[] | null;
  baselines: Baseline[];
  error: string | null;
  errorClasses: string[];
  selected: number;
}

export function initialState(): AppState {
  return {
    classes: [],
    imageCount: 0,
    objectCount: 0,
    search: null,
    judgments: {},
    pending: {},
    curve: null,
    baselines: [],
    error: null,
    errorClasses: [],
    selected: -1,
  };
}

export function resetForSearch(state: AppState, search: ActiveSearch): void {
  state.search = search;
  state.judgments = {};
  state.pending = {};
  state.curve = null;
  state.error = null;
  state.errorClasses = [];
  state.selected = search.results.length > 0 ? 0 : -1;
}

export function setError(state: AppState, message: string, classes: string[] = []): void {
  state.error = message;
  state.errorClasses = classes;
}

export function clearError(state: AppState): void {
  state.error = null;
  state.errorClasses = [];
}

/** Stage a verdict; refuse while a previous one is still in flight. */
export function beginJudgment(state: AppState, imageId: string, verdict: Verdict): boolean {
  if (state.pending[imageId] !== undefined) return false;
  state.pending[imageId] = verdict;
  return true;
}

/** Server confirmed the append: the verdict becomes visible. */
export function confirmJudgment(state: AppState, imageId: string): void {
  const verdict = state.pending[imageId];
  delete state.pending[imageId];
  if (verdict !== undefined) {
    state.judgments[imageId] = verdict;
  }
}

/** Server rejected or vanished: drop the staged verdict entirely. */
export function failJudgment(state: AppState, imageId: string): void {
  delete state.pending[imageId];
}

export function verdictOf(state: AppState, imageId: string): Verdict | "pending" | null {
  if (state.pending[imageId] !== undefined) return "pending";
  return state.judgments[imageId] ?? null;
}

export function moveSelection(state: AppState, delta: number): void {
  if (state.search === null || state.search.results.length === 0) return;
  const count = state.search.results.length;
  const current = state.selected < 0 ? 0 : state.selected;
  state.selected = Math.min(count - 1, Math.max(0, current + delta));
}

export function selectedImageId(state: AppState): string | null {
  if (state.search === null || state.selected < 0) return null;
  const row = state.search.results[state.selected];
  return row ? row.image_id : null;
}
