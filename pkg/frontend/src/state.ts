/**
 * Client-side session state with revision gating.
 *
 * Every server response that depends on parameter values carries the session
 * revision it was computed at.  The store tracks the latest revision the
 * client has acknowledged and rejects responses computed at an older one, so
 * out-of-order network completions can never roll the display back.
 *
 * Parameter edits are two-phase: `editParam` records a pending local value
 * (what the input shows while the debounced request is in flight) and
 * `ackParamUpdate` / `rejectParamUpdate` either commit it or fall back to the
 * last acknowledged value.
 */

import type {
  CurveResponse,
  DatasetInfo,
  FitEvent,
  FunctorInfo,
  ModelInfo,
  ParameterInfo,
  ProfileResponse,
  SessionInfo,
} from "./api.js";

export interface Chi2Point {
  iteration: number;
  chi2: number;
}

export class SessionStore {
  name = "";
  /** Latest server revision acknowledged by this client. */
  revision = 0;
  params = new Map<string, ParameterInfo>();
  paramOrder: string[] = [];
  functors: FunctorInfo[] = [];
  models: ModelInfo[] = [];
  datasets: DatasetInfo[] = [];
  samples: string[] = [];
  fitRunning = false;
  fitStatus: string | null = null;
  chi2Trace: Chi2Point[] = [];

  /** Local values shown while an edit awaits acknowledgement. */
  private pendingEdits = new Map<string, number>();
  /** Revision currently displayed, per functor / per profile sample. */
  private shownCurves = new Map<string, number>();
  private shownProfiles = new Map<string, number>();

  // -- inventory -------------------------------------------------------------

  applySession(info: SessionInfo): void {
    this.name = info.name;
    this.ackRevision(info.revision);
    this.params = new Map(info.parameters.map((p) => [p.id, { ...p }]));
    this.paramOrder = info.parameters.map((p) => p.id);
    this.functors = info.functors;
    this.models = info.models;
    this.datasets = info.datasets;
    this.samples = info.samples;
    this.fitRunning = info.fit.running;
    this.fitStatus = info.fit.status;
  }

  /** Record that the server confirmed state at this revision. */
  ackRevision(revision: number): void {
    if (revision > this.revision) this.revision = revision;
  }

  // -- parameter edits -------------------------------------------------------

  /** True when edits are allowed (the server rejects them with 409 during a fit). */
  get editable(): boolean {
    return !this.fitRunning;
  }

  /** Stage a local edit; the input shows this value until the server answers. */
  editParam(id: string, rawValue: number): void {
    if (!this.params.has(id)) throw new Error(`unknown parameter ${id}`);
    this.pendingEdits.set(id, rawValue);
  }

  /** Value an input should display: pending edit if any, else acknowledged. */
  displayedRaw(id: string): number {
    const pending = this.pendingEdits.get(id);
    if (pending !== undefined) return pending;
    const p = this.params.get(id);
    if (p === undefined) throw new Error(`unknown parameter ${id}`);
    return p.raw_value;
  }

  /** Commit an edit the server accepted at `revision`. */
  ackParamUpdate(id: string, rawValue: number, revision: number): void {
    const p = this.params.get(id);
    if (p !== undefined) p.raw_value = rawValue;
    // only clear the pending entry if no newer edit was staged meanwhile
    if (this.pendingEdits.get(id) === rawValue) this.pendingEdits.delete(id);
    this.ackRevision(revision);
  }

  /** Drop a rejected edit; the display falls back to the acknowledged value. */
  rejectParamUpdate(id: string): void {
    this.pendingEdits.delete(id);
  }

  hasPendingEdit(id: string): boolean {
    return this.pendingEdits.has(id);
  }

  // -- stale-response gating -------------------------------------------------

  /**
   * Accept a curve response unless it is stale.  Stale means computed at a
   * revision older than either the latest acknowledged revision or the curve
   * already on screen for that functor.  Returns whether to draw it.
   */
  acceptCurve(response: CurveResponse): boolean {
    const shown = this.shownCurves.get(response.functor) ?? -1;
    if (response.revision < this.revision || response.revision < shown) {
      return false;
    }
    this.shownCurves.set(response.functor, response.revision);
    this.ackRevision(response.revision);
    return true;
  }

  acceptProfile(response: ProfileResponse): boolean {
    const shown = this.shownProfiles.get(response.sample) ?? -1;
    if (response.revision < this.revision || response.revision < shown) {
      return false;
    }
    this.shownProfiles.set(response.sample, response.revision);
    this.ackRevision(response.revision);
    return true;
  }

  // -- fit lifecycle ---------------------------------------------------------

  /** Reset the trace when a fit is accepted (202 with its start revision). */
  beginFit(revision: number): void {
    this.chi2Trace = [];
    this.fitRunning = true;
    this.fitStatus = "running";
    this.pendingEdits.clear();
    this.ackRevision(revision);
  }

  /**
   * Fold one event from the progress stream into the view.  Progress events
   * move the free parameters to the optimizer's current best point and extend
   * the chi-squared trace; the terminal event records status and errors.
   */
  applyFitEvent(event: FitEvent): void {
    if (event.type === "progress") {
      const last = this.chi2Trace[this.chi2Trace.length - 1];
      if (last === undefined || event.iteration > last.iteration) {
        this.chi2Trace.push({ iteration: event.iteration, chi2: event.chi2 });
      }
      for (const [id, raw] of Object.entries(event.params)) {
        const p = this.params.get(id);
        if (p !== undefined) p.raw_value = raw;
      }
      this.fitRunning = true;
      this.fitStatus = "running";
    } else {
      this.fitRunning = false;
      this.fitStatus = event.status;
      if (event.errors !== undefined) {
        for (const [id, sigma] of Object.entries(event.errors)) {
          const p = this.params.get(id);
          if (p !== undefined) p.error = sigma;
        }
      }
    }
  }
}
