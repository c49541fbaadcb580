/**
 * In-memory stand-in for the /v1 service, honoring the same wire
 * contract the real server exposes: class-gated search with a cached
 * ranking per query fingerprint, judgment recording, and prefix-sum
 * curves over recorded true positives.
 */

import { ApiError, type SearchApi } from "../api.js";
import type {
  ClassesResponse,
  CurveResponse,
  JudgmentAck,
  JudgmentRequestBody,
  SearchRequestBody,
  SearchResponse,
  SearchRow,
  Verdict,
} from "../types.js";

export class FakeServer implements SearchApi {
  readonly searchCalls: SearchRequestBody[] = [];
  readonly judgeCalls: JudgmentRequestBody[] = [];
  private readonly rankings = new Map<string, string[]>();
  private readonly verdicts = new Map<string, Map<string, Verdict>>();

  constructor(private readonly corpus: Record<string, SearchRow[]>) {}

  private validClasses(): string[] {
    return Object.keys(this.corpus).sort();
  }

  async getClasses(): Promise<ClassesResponse> {
    const ids = new Set<string>();
    let objects = 0;
    for (const rows of Object.values(this.corpus)) {
      objects += rows.length;
      for (const row of rows) ids.add(row.image_id);
    }
    return {
      classes: Object.entries(this.corpus).map(([label, rows]) => ({
        label,
        object_count: rows.length,
      })),
      image_count: ids.size,
      object_count: objects,
      dim: 64,
      encoder_id: "toy-64",
    };
  }

  async search(body: SearchRequestBody): Promise<SearchResponse> {
    this.searchCalls.push(body);
    if (body.mode === "object" && body.class === null) {
      throw new ApiError(
        400,
        "object-level search requires a class",
        this.validClasses(),
      );
    }
    const rows = body.class === null ? [] : this.corpus[body.class];
    if (rows === undefined) {
      throw new ApiError(
        400,
        `unknown class '${body.class}'`,
        this.validClasses(),
      );
    }
    const results = rows.slice(0, body.k);
    const queryId = `q-${body.class}-${body.text}-${body.mode}`;
    this.rankings.set(
      queryId,
      results.map((r) => r.image_id),
    );
    return {
      results,
      exhausted: results.length < body.k,
      query_id: queryId,
    };
  }

  async judge(body: JudgmentRequestBody): Promise<JudgmentAck> {
    this.judgeCalls.push(body);
    let byImage = this.verdicts.get(body.query_id);
    if (byImage === undefined) {
      byImage = new Map();
      this.verdicts.set(body.query_id, byImage);
    }
    byImage.set(body.image_id, body.verdict);
    return { status: "recorded", query_id: body.query_id, ts: Date.now() / 1000 };
  }

  async curve(queryId: string, n: number): Promise<CurveResponse> {
    const ranked = this.rankings.get(queryId);
    if (ranked === undefined) {
      throw new ApiError(
        404,
        `no cached ranking for query_id '${queryId}'; run the search first`,
      );
    }
    const byImage = this.verdicts.get(queryId);
    const curve: number[] = [];
    let total = 0;
    for (let t = 0; t < n; t += 1) {
      const imageId = ranked[t];
      if (imageId !== undefined && byImage?.get(imageId) === "true_positive") {
        total += 1;
      }
      curve.push(total);
    }
    return { query_id: queryId, n, curve };
  }

  imageUrl(imageId: string): string {
    return `/v1/images/${encodeURIComponent(imageId)}`;
  }

  cropUrl(imageId: string, objectIndex: number): string {
    return `${this.imageUrl(imageId)}/objects/${objectIndex}`;
  }
}
