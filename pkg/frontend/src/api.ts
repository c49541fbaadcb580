/**
 * Typed client for the /v1 API. Non-2xx responses become ApiError with
 * the server's message (and, for unknown classes, the valid class list)
 * so the UI can show exactly what the server said.
 */

import type {
  ClassesResponse,
  CurveResponse,
  JudgmentAck,
  JudgmentRequestBody,
  SearchRequestBody,
  SearchResponse,
} from "./types.js";

export class ApiError extends Error {
  constructor(
    readonly status: number,
    message: string,
    readonly validClasses: string[] = [],
  ) {
    super(message);
    this.name = "ApiError";
  }
}

/** The surface the app needs; tests substitute a simulated server. */
export interface SearchApi {
  getClasses(): Promise<ClassesResponse>;
  search(body: SearchRequestBody): Promise<SearchResponse>;
  judge(body: JudgmentRequestBody): Promise<JudgmentAck>;
  curve(queryId: string, n: number): Promise<CurveResponse>;
  imageUrl(imageId: string): string;
  cropUrl(imageId: string, objectIndex: number): string;
}

export class Client implements SearchApi {
  private readonly fetchFn: typeof fetch;

  constructor(
    private readonly baseUrl = "",
    fetchFn?: typeof fetch,
  ) {
    this.fetchFn = fetchFn ?? globalThis.fetch.bind(globalThis);
  }

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const resp = await this.fetchFn(this.baseUrl + path, init);
    if (!resp.ok) {
      let message = `request failed with status ${resp.status}`;
      let validClasses: string[] = [];
      try {
        const body = (await resp.json()) as { detail?: unknown };
        const detail = body.detail;
        if (detail && typeof detail === "object") {
          const d = detail as { message?: string; valid_classes?: string[] };
          if (d.message) message = d.message;
          if (Array.isArray(d.valid_classes)) validClasses = d.valid_classes;
        } else if (typeof detail === "string") {
          message = detail;
        }
      } catch {
        // non-JSON error body; keep the status message
      }
      throw new ApiError(resp.status, message, validClasses);
    }
    return (await resp.json()) as T;
  }

  getClasses(): Promise<ClassesResponse> {
    return this.request<ClassesResponse>("/v1/classes");
  }

  search(body: SearchRequestBody): Promise<SearchResponse> {
    return this.request<SearchResponse>("/v1/search", {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(body),
    });
  }

  judge(body: JudgmentRequestBody): Promise<JudgmentAck> {
    return this.request<JudgmentAck>("/v1/judgments", {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(body),
    });
  }

  curve(queryId: string, n: number): Promise<CurveResponse> {
    const params = new URLSearchParams({ query_id: queryId, n: String(n) });
    return this.request<CurveResponse>(`/v1/curves?${params}`);
  }

  imageUrl(imageId: string): string {
    return `${this.baseUrl}/v1/images/${encodeURIComponent(imageId)}`;
  }

  cropUrl(imageId: string, objectIndex: number): string {
    return `${this.imageUrl(imageId)}/objects/${objectIndex}`;
  }
}
