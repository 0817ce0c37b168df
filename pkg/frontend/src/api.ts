/** Typed client for the model-session HTTP API. */

import { readSseStream } from "./sse.js";

// -- response shapes ---------------------------------------------------------

export interface ParameterInfo {
  id: string;
  name: string;
  raw_value: number;
  scale: number;
  error: number | null;
  fixed: boolean;
  bounds: [number, number] | null;
  units: string;
  /** Effective value, raw_value * scale. */
  value: number;
}

export interface FunctorInfo {
  name: string;
  kind: string;
  arity: number;
  variables: string[];
}

export interface ModelInfo {
  name: string;
  functor: string;
  dataset: string;
  scaling: string;
  chi2: number | null;
}

export interface DatasetInfo {
  name: string;
  n: number;
  ndim: number;
  n_active: number;
}

export interface FitState {
  running: boolean;
  status: string | null;
}

export interface SessionInfo {
  name: string;
  revision: number;
  parameters: ParameterInfo[];
  functors: FunctorInfo[];
  models: ModelInfo[];
  datasets: DatasetInfo[];
  samples: string[];
  fit: FitState;
}

export interface CurveResponse {
  functor: string;
  /** Session revision the values were computed at. */
  revision: number;
  shape: number[];
  variables: string[];
  coordinates: Record<string, number[]>;
  values: number[];
  values_im?: number[];
}

export interface ProfileResponse {
  sample: string;
  revision: number;
  z: number[];
  re: number[];
  im: number[];
  msld: number[];
}

export interface ParamUpdate {
  raw_value?: number;
  fixed?: boolean;
  bounds?: [number, number] | null;
}

export interface FitRequest {
  optimizer?: "lm" | "de";
  options?: Record<string, unknown>;
}

export interface FitProgressEvent {
  type: "progress";
  iteration: number;
  chi2: number;
  elapsed: number;
  /** Raw values of the free parameters at the current best point. */
  params: Record<string, number>;
}

export interface FitDoneEvent {
  type: "done";
  status: string;
  chi2: number | null;
  iterations: number;
  errors?: Record<string, number | null>;
}

export type FitEvent = FitProgressEvent | FitDoneEvent;

export interface ParameterRecord {
  id: string;
  name: string;
  raw_value: number;
  scale: number;
  error: number | null;
  fixed: boolean;
  bounds: [number, number] | null;
  units: string;
}

export interface Snapshot {
  saved_at: string;
  chi2: number | null;
  status: string | null;
  parameters: ParameterRecord[];
}

// -- client ------------------------------------------------------------------

/** Raised for any non-2xx response; carries the HTTP status and detail. */
export class ApiError extends Error {
  constructor(
    readonly status: number,
    detail: string,
  ) {
    super(detail);
    this.name = "ApiError";
  }
}

async function unwrap<T>(response: Response): Promise<T> {
  if (!response.ok) {
    let detail = `${response.status} ${response.statusText}`;
    try {
      const body: unknown = await response.json();
      if (
        typeof body === "object" &&
        body !== null &&
        typeof (body as { detail?: unknown }).detail === "string"
      ) {
        detail = (body as { detail: string }).detail;
      }
    } catch {
      // keep the status line when the body is not JSON
    }
    throw new ApiError(response.status, detail);
  }
  return (await response.json()) as T;
}

export class ApiClient {
  /** @param base Origin prefix, e.g. "" when served from the same host. */
  constructor(readonly base: string = "") {}

  private url(path: string, query?: Record<string, string>): string {
    const q = query ? `?${new URLSearchParams(query)}` : "";
    return `${this.base}${path}${q}`;
  }

  async health(): Promise<{ status: string }> {
    return unwrap(await fetch(this.url("/api/health")));
  }

  async session(): Promise<SessionInfo> {
    return unwrap(await fetch(this.url("/api/session")));
  }

  /** Apply parameter edits; resolves to the new session revision. */
  async patchParams(
    updates: Record<string, ParamUpdate>,
  ): Promise<{ revision: number }> {
    return unwrap(
      await fetch(this.url("/api/params"), {
        method: "PATCH",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify(updates),
      }),
    );
  }

  /**
   * Evaluate a functor on a grid, e.g. "0.01:2:0.005" or "q=0:1:0.01".
   * The response's `revision` is the session revision it was computed at.
   */
  async curve(functor: string, grid: string): Promise<CurveResponse> {
    return unwrap(await fetch(this.url("/api/curve", { functor, grid })));
  }

  async profile(
    sample: string,
    range?: { zmin?: number; zmax?: number; n?: number },
  ): Promise<ProfileResponse> {
    const query: Record<string, string> = { sample };
    if (range?.zmin !== undefined) query.zmin = String(range.zmin);
    if (range?.zmax !== undefined) query.zmax = String(range.zmax);
    if (range?.n !== undefined) query.n = String(range.n);
    return unwrap(await fetch(this.url("/api/profile", query)));
  }

  async startFit(
    request: FitRequest = {},
  ): Promise<{ fit_id: number; revision: number }> {
    return unwrap(
      await fetch(this.url("/api/fit"), {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify(request),
      }),
    );
  }

  async interruptFit(): Promise<{ interrupted: boolean }> {
    return unwrap(
      await fetch(this.url("/api/fit/interrupt"), { method: "POST" }),
    );
  }

  /**
   * Subscribe to the progress stream of the current fit.  Yields parsed
   * events and completes after the terminal event.  Late subscribers get
   * a replay ending in the same terminal event.
   */
  async *fitEvents(signal?: AbortSignal): AsyncGenerator<FitEvent> {
    const response = await fetch(this.url("/api/fit/events"), { signal });
    if (!response.ok) {
      await unwrap(response); // throws ApiError
    }
    if (response.body === null) {
      throw new ApiError(0, "event stream has no body");
    }
    for await (const data of readSseStream(response.body)) {
      yield JSON.parse(data) as FitEvent;
    }
  }

  async getSnapshot(): Promise<Snapshot> {
    return unwrap(await fetch(this.url("/api/params/snapshot")));
  }

  async putSnapshot(doc: Snapshot): Promise<{ revision: number }> {
    return unwrap(
      await fetch(this.url("/api/params/snapshot"), {
        method: "PUT",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify(doc),
      }),
    );
  }
}
