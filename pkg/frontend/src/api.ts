/** Typed client for the twinqa service API.
 *
 * The fetch implementation is injectable so tests can mock the transport;
 * the token lives in memory only (supplied by the login field).
 */

import type {
  ApiError,
  AuditEntry,
  DecisionAction,
  ElementDetail,
  ElementSummary,
  IngestReport,
  SessionInfo,
  StateRecord,
  WhatIfResponse,
} from "./types.js";

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export type Result<T> = { ok: true; value: T } | { ok: false; error: ApiError };

async function parseError(response: Response): Promise<ApiError> {
  let body: Record<string, unknown> = {};
  try {
    body = (await response.json()) as Record<string, unknown>;
  } catch {
    // non-JSON error body; keep the status only
  }
  return {
    status: response.status,
    reason: typeof body.reason === "string" ? body.reason : `HTTP ${response.status}`,
    predecessors: Array.isArray(body.predecessors) ? (body.predecessors as string[]) : undefined,
    from: typeof body.from === "string" ? body.from : undefined,
    action: typeof body.action === "string" ? body.action : undefined,
    role: typeof body.role === "string" ? body.role : undefined,
  };
}

export class ApiClient {
  constructor(
    private readonly baseUrl: string,
    private token: string,
    private readonly fetchFn: FetchLike = (url, init) => fetch(url, init),
  ) {}

  setToken(token: string): void {
    this.token = token;
  }

  private headers(extra: Record<string, string> = {}): Record<string, string> {
    return { Authorization: `Bearer ${this.token}`, ...extra };
  }

  private async getJson<T>(path: string): Promise<Result<T>> {
    const response = await this.fetchFn(`${this.baseUrl}${path}`, {
      headers: this.headers(),
    });
    if (!response.ok) return { ok: false, error: await parseError(response) };
    return { ok: true, value: (await response.json()) as T };
  }

  getSession(): Promise<Result<SessionInfo>> {
    return this.getJson<SessionInfo>("/api/session");
  }

  async getElements(): Promise<Result<ElementSummary[]>> {
    const result = await this.getJson<{ elements: ElementSummary[] }>("/api/elements");
    return result.ok ? { ok: true, value: result.value.elements } : result;
  }

  getElement(id: string): Promise<Result<ElementDetail>> {
    return this.getJson<ElementDetail>(`/api/elements/${encodeURIComponent(id)}`);
  }

  async getAudit(): Promise<Result<AuditEntry[]>> {
    const result = await this.getJson<{ audit: AuditEntry[] }>("/api/audit");
    return result.ok ? { ok: true, value: result.value.audit } : result;
  }

  async getWarnings(): Promise<Result<unknown[]>> {
    const result = await this.getJson<{ warnings: unknown[] }>("/api/warnings");
    return result.ok ? { ok: true, value: result.value.warnings } : result;
  }

  getEvidence(id: string): Promise<Result<Record<string, unknown>>> {
    return this.getJson<Record<string, unknown>>(
      `/api/elements/${encodeURIComponent(id)}/evidence`,
    );
  }

  /** The what-if forecast is entirely server-computed; see whatif view. */
  getWhatIf(id: string, tempC: number, threshold: number): Promise<Result<WhatIfResponse>> {
    const query = `temp_c=${encodeURIComponent(tempC)}&threshold=${encodeURIComponent(threshold)}`;
    return this.getJson<WhatIfResponse>(
      `/api/elements/${encodeURIComponent(id)}/whatif?${query}`,
    );
  }

  async postDecision(
    id: string,
    action: DecisionAction,
    rationale: string,
  ): Promise<Result<StateRecord>> {
    const response = await this.fetchFn(
      `${this.baseUrl}/api/elements/${encodeURIComponent(id)}/decision`,
      {
        method: "POST",
        headers: this.headers({ "Content-Type": "application/json" }),
        body: JSON.stringify({ action, rationale }),
      },
    );
    if (!response.ok) return { ok: false, error: await parseError(response) };
    return { ok: true, value: (await response.json()) as StateRecord };
  }

  async postEvents(jsonl: string): Promise<Result<IngestReport>> {
    const response = await this.fetchFn(`${this.baseUrl}/api/events`, {
      method: "POST",
      headers: this.headers({ "Content-Type": "application/x-ndjson" }),
      body: jsonl,
    });
    if (!response.ok) return { ok: false, error: await parseError(response) };
    return { ok: true, value: (await response.json()) as IngestReport };
  }
}
