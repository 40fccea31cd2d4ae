import type {
  ApiErrorBody,
  ChangeRecord,
  DatasetSummary,
  ImpactReport,
  PotentialChange,
  QueryResult,
} from "./types.js";

export class ApiError extends Error {
  constructor(public code: string, message: string, public status: number) {
    super(message);
  }
}

/** Connection-level failure (server unreachable); shown as a retryable banner. */
export class ConnectionError extends Error {}

export class ApiClient {
  constructor(private baseUrl: string, private fetchFn: typeof fetch = fetch) {}

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    let response: Response;
    try {
      response = await this.fetchFn(`${this.baseUrl}${path}`, {
        method,
        headers: body !== undefined ? { "content-type": "application/json" } : undefined,
        body: body !== undefined ? JSON.stringify(body) : undefined,
      });
    } catch (err) {
      throw new ConnectionError(`cannot reach ${this.baseUrl}: ${String(err)}`);
    }
    if (!response.ok) {
      let code = `HTTP_${response.status}`;
      let message = response.statusText;
      try {
        const parsed = (await response.json()) as ApiErrorBody;
        code = parsed.error.code;
        message = parsed.error.message;
      } catch {
        // non-JSON error body: keep the HTTP status
      }
      throw new ApiError(code, message, response.status);
    }
    return (await response.json()) as T;
  }

  listChanges(status?: string): Promise<ChangeRecord[]> {
    const query = status ? `?status=${encodeURIComponent(status)}` : "";
    return this.request("GET", `/changes${query}`);
  }

  propose(changeId: string): Promise<PotentialChange[]> {
    return this.request("POST", `/changes/${encodeURIComponent(changeId)}/propose`);
  }

  optionsFor(changeId: string): Promise<PotentialChange[]> {
    return this.request("GET", `/changes/${encodeURIComponent(changeId)}/options`);
  }

  preview(pcId: string): Promise<ImpactReport> {
    return this.request("GET", `/options/${encodeURIComponent(pcId)}/preview`);
  }

  apply(changeId: string | null, pcId: string, parameters: Record<string, unknown>, actor: string) {
    const change = changeId ?? "none";
    return this.request<PotentialChange>(
      "POST",
      `/changes/${encodeURIComponent(change)}/options/${encodeURIComponent(pcId)}/apply`,
      { parameters, actor },
    );
  }

  reject(pcId: string, actor: string): Promise<PotentialChange> {
    return this.request("POST", `/options/${encodeURIComponent(pcId)}/reject`, { actor });
  }

  history(): Promise<PotentialChange[]> {
    return this.request("GET", "/history");
  }

  levelDatasets(level: number): Promise<DatasetSummary[]> {
    return this.request("GET", `/levels/${level}/datasets`);
  }

  datasetRecords(level: number, datasetId: string): Promise<Record<string, unknown>[]> {
    return this.request("GET", `/levels/${level}/datasets/${encodeURIComponent(datasetId)}/records`);
  }

  exportMetadata(): Promise<Record<string, unknown>> {
    return this.request("GET", "/metadata/export");
  }

  query(cubeId: string, spec: Record<string, unknown>): Promise<QueryResult> {
    return this.request("POST", `/cubes/${encodeURIComponent(cubeId)}/query`, spec);
  }
}
