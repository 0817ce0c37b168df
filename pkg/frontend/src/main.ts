/**
 * Browser application: parameter editing with debounced writes, live curve
 * and profile views gated by session revision, fit control with a streamed
 * chi-squared trace, and snapshot save/restore.
 */

import {
  ApiClient,
  ApiError,
  type CurveResponse,
  type FunctorInfo,
  type ProfileResponse,
} from "./api.js";
import { debounce, type Debounced } from "./debounce.js";
import { drawHeatmap, drawLinePlot } from "./plot.js";
import { SessionStore } from "./state.js";

/** Slider drags coalesce into one PATCH this long after the pointer rests. */
const PATCH_DEBOUNCE_MS = 150;
const NOTICE_TTL_MS = 7000;

const client = new ApiClient("");
const store = new SessionStore();

// -- DOM handles -------------------------------------------------------------

function byId<T extends HTMLElement>(id: string): T {
  const el = document.getElementById(id);
  if (el === null) throw new Error(`missing element #${id}`);
  return el as T;
}

const ui = {
  sessionName: byId<HTMLSpanElement>("session-name"),
  sessionChi2: byId<HTMLSpanElement>("session-chi2"),
  fitStatus: byId<HTMLSpanElement>("fit-status"),
  btnFit: byId<HTMLButtonElement>("btn-fit"),
  btnInterrupt: byId<HTMLButtonElement>("btn-interrupt"),
  btnSave: byId<HTMLButtonElement>("btn-save"),
  btnLoad: byId<HTMLButtonElement>("btn-load"),
  fileLoad: byId<HTMLInputElement>("file-load"),
  params: byId<HTMLDivElement>("params"),
  functorSelect: byId<HTMLSelectElement>("functor-select"),
  gridInput: byId<HTMLInputElement>("grid-input"),
  logToggle: byId<HTMLInputElement>("log-toggle"),
  btnRefresh: byId<HTMLButtonElement>("btn-refresh"),
  curveCanvas: byId<HTMLCanvasElement>("curve-canvas"),
  fitPanel: byId<HTMLDivElement>("fit-panel"),
  chi2Canvas: byId<HTMLCanvasElement>("chi2-canvas"),
  profilePanel: byId<HTMLDivElement>("profile-panel"),
  sampleSelect: byId<HTMLSelectElement>("sample-select"),
  profileCanvas: byId<HTMLCanvasElement>("profile-canvas"),
  notices: byId<HTMLDivElement>("notices"),
};

// -- notices -----------------------------------------------------------------

function notify(message: string, kind: "error" | "info" = "error"): void {
  const el = document.createElement("div");
  el.className = `notice ${kind}`;
  el.textContent = message;
  el.addEventListener("click", () => el.remove());
  ui.notices.append(el);
  setTimeout(() => el.remove(), NOTICE_TTL_MS);
}

function notifyError(err: unknown, where: string): void {
  const detail =
    err instanceof ApiError
      ? `${where}: ${err.message} (${err.status})`
      : `${where}: ${String(err)}`;
  notify(detail);
}

// -- formatting and canvas sizing --------------------------------------------

function fmt(v: number): string {
  if (!Number.isFinite(v)) return String(v);
  const mag = Math.abs(v);
  if (mag !== 0 && (mag >= 1e6 || mag < 1e-4)) {
    return v.toExponential(6).replace(/\.?0+e/, "e");
  }
  return String(parseFloat(v.toPrecision(8)));
}

function sizeCanvas(canvas: HTMLCanvasElement): number {
  const ratio = window.devicePixelRatio || 1;
  canvas.width = Math.max(1, Math.round(canvas.clientWidth * ratio));
  canvas.height = Math.max(1, Math.round(canvas.clientHeight * ratio));
  return ratio;
}

// -- parameter rows ----------------------------------------------------------

interface ParamRow {
  valueInput: HTMLInputElement;
  slider: HTMLInputElement | null;
  fixedBox: HTMLInputElement;
  errorEl: HTMLSpanElement;
}

const paramRows = new Map<string, ParamRow>();
const patchers = new Map<string, Debounced<[number]>>();

function stageEdit(id: string, raw: number): void {
  if (!store.editable || !Number.isFinite(raw)) return;
  store.editParam(id, raw);
  const row = paramRows.get(id);
  if (row !== undefined) row.valueInput.classList.add("pending");
  let patcher = patchers.get(id);
  if (patcher === undefined) {
    patcher = debounce((value: number) => {
      void sendValue(id, value);
    }, PATCH_DEBOUNCE_MS);
    patchers.set(id, patcher);
  }
  patcher(raw);
}

async function sendValue(id: string, raw: number): Promise<void> {
  try {
    const { revision } = await client.patchParams({ [id]: { raw_value: raw } });
    store.ackParamUpdate(id, raw, revision);
    syncParamRow(id);
    void refreshModels();
    void refreshCurve();
    void refreshProfile();
  } catch (err) {
    // a rejected write falls back to the last acknowledged value
    store.rejectParamUpdate(id);
    syncParamRow(id);
    notifyError(err, `parameter ${id}`);
    if (err instanceof ApiError && err.status === 409) void reloadSession();
  }
}

async function sendFixed(id: string, fixed: boolean): Promise<void> {
  try {
    const { revision } = await client.patchParams({ [id]: { fixed } });
    const p = store.params.get(id);
    if (p !== undefined) p.fixed = fixed;
    store.ackRevision(revision);
  } catch (err) {
    syncParamRow(id);
    notifyError(err, `parameter ${id}`);
  }
}

function buildParamRows(): void {
  ui.params.replaceChildren();
  paramRows.clear();
  for (const patcher of patchers.values()) patcher.cancel();
  patchers.clear();
  for (const id of store.paramOrder) {
    const p = store.params.get(id);
    if (p === undefined) continue;
    const root = document.createElement("div");
    root.className = "param";

    const row = document.createElement("div");
    row.className = "row";
    const name = document.createElement("span");
    name.className = "name";
    name.textContent = p.name;
    name.title = p.scale === 1 ? p.name : `${p.name} (× ${fmt(p.scale)})`;
    const units = document.createElement("span");
    units.className = "units";
    units.textContent = p.units;
    const valueInput = document.createElement("input");
    valueInput.type = "text";
    valueInput.className = "value";
    valueInput.inputMode = "decimal";
    valueInput.spellcheck = false;
    const fixedLabel = document.createElement("label");
    fixedLabel.className = "fixed";
    const fixedBox = document.createElement("input");
    fixedBox.type = "checkbox";
    fixedLabel.append(fixedBox, "fix");
    row.append(name, units, valueInput, fixedLabel);
    root.append(row);

    let slider: HTMLInputElement | null = null;
    if (p.bounds !== null) {
      slider = document.createElement("input");
      slider.type = "range";
      root.append(slider);
    }
    const meta = document.createElement("div");
    meta.className = "row";
    const errorEl = document.createElement("span");
    errorEl.className = "error";
    meta.append(errorEl);
    root.append(meta);
    ui.params.append(root);
    paramRows.set(id, { valueInput, slider, fixedBox, errorEl });

    valueInput.addEventListener("input", () => {
      const raw = Number(valueInput.value);
      if (Number.isFinite(raw)) stageEdit(id, raw);
    });
    valueInput.addEventListener("change", () => {
      const raw = Number(valueInput.value);
      if (!Number.isFinite(raw)) {
        syncParamRow(id);
        return;
      }
      stageEdit(id, raw);
      patchers.get(id)?.flush();
    });
    slider?.addEventListener("input", () => {
      const raw = Number(slider.value);
      valueInput.value = fmt(raw);
      stageEdit(id, raw);
    });
    fixedBox.addEventListener("change", () => {
      void sendFixed(id, fixedBox.checked);
    });
    syncParamRow(id);
  }
}

function syncParamRow(id: string): void {
  const row = paramRows.get(id);
  const p = store.params.get(id);
  if (row === undefined || p === undefined) return;
  const raw = store.displayedRaw(id);
  if (document.activeElement !== row.valueInput) {
    row.valueInput.value = fmt(raw);
  }
  row.valueInput.classList.toggle("pending", store.hasPendingEdit(id));
  row.valueInput.disabled = !store.editable;
  row.fixedBox.checked = p.fixed;
  row.fixedBox.disabled = !store.editable;
  if (row.slider !== null && p.bounds !== null) {
    const [lo, hi] = p.bounds;
    row.slider.min = String(lo);
    row.slider.max = String(hi);
    row.slider.step = String((hi - lo) / 1000 || 1);
    row.slider.value = String(raw);
    row.slider.disabled = !store.editable;
  }
  const parts: string[] = [];
  if (p.error !== null) parts.push(`± ${fmt(p.error)}`);
  if (p.scale !== 1) parts.push(`value ${fmt(raw * p.scale)}`);
  row.errorEl.textContent = parts.join("   ");
}

function syncAllParamRows(): void {
  for (const id of paramRows.keys()) syncParamRow(id);
}

// -- status bar --------------------------------------------------------------

function renderStatus(): void {
  ui.sessionName.textContent = store.name || "session";
  ui.sessionChi2.textContent = store.models
    .map((m) => `${m.name}: χ² = ${m.chi2 === null ? "–" : fmt(m.chi2)}`)
    .join("    ");
  const status = store.fitRunning ? "running" : (store.fitStatus ?? "idle");
  ui.fitStatus.textContent = status;
  ui.fitStatus.className = `badge ${status}`;
  ui.btnFit.disabled = store.fitRunning || store.models.length === 0;
  ui.btnInterrupt.disabled = !store.fitRunning;
  ui.btnSave.disabled = false;
  ui.btnLoad.disabled = store.fitRunning;
}

// -- curve view --------------------------------------------------------------

const gridByFunctor = new Map<string, string>();
let lastCurve: CurveResponse | null = null;
let curveInFlight = false;
let curveQueued = false;

function defaultGrid(f: FunctorInfo): string {
  if (f.arity === 2) {
    const [a, b] = f.variables;
    return `${a} = -0.1:0.1:0.002, ${b} = -0.1:0.1:0.002`;
  }
  return "0.005:1.5:0.0025";
}

function selectedFunctor(): FunctorInfo | null {
  const name = ui.functorSelect.value;
  return store.functors.find((f) => f.name === name) ?? null;
}

async function refreshCurve(): Promise<void> {
  if (curveInFlight) {
    curveQueued = true;
    return;
  }
  const functor = selectedFunctor();
  const grid = ui.gridInput.value.trim();
  if (functor === null || grid === "") return;
  curveInFlight = true;
  try {
    const response = await client.curve(functor.name, grid);
    if (store.acceptCurve(response)) {
      lastCurve = response;
      drawCurve();
    }
  } catch (err) {
    notifyError(err, `curve ${functor.name}`);
  } finally {
    curveInFlight = false;
    if (curveQueued) {
      curveQueued = false;
      void refreshCurve();
    }
  }
}

function drawCurve(): void {
  const response = lastCurve;
  if (response === null) return;
  const ratio = sizeCanvas(ui.curveCanvas);
  const log = ui.logToggle.checked;
  if (response.variables.length === 2) {
    const [xName, yName] = response.variables;
    drawHeatmap(
      ui.curveCanvas,
      response.coordinates[xName],
      response.coordinates[yName],
      response.values,
      {
        log,
        xLabel: xName,
        yLabel: yName,
        title: response.functor,
        pixelRatio: ratio,
      },
    );
    return;
  }
  const xName = response.variables[0] ?? Object.keys(response.coordinates)[0];
  const x = response.coordinates[xName] ?? [];
  const series = [
    {
      x,
      y: response.values,
      label: response.values_im === undefined ? undefined : "Re",
    },
  ];
  if (response.values_im !== undefined) {
    series.push({ x, y: response.values_im, label: "Im" });
  }
  drawLinePlot(ui.curveCanvas, series, {
    ylog: log,
    xLabel: xName,
    title: response.functor,
    pixelRatio: ratio,
  });
}

// -- profile view ------------------------------------------------------------

let lastProfile: ProfileResponse | null = null;

async function refreshProfile(): Promise<void> {
  if (store.samples.length === 0) return;
  const sample = ui.sampleSelect.value;
  if (sample === "") return;
  try {
    const response = await client.profile(sample);
    if (store.acceptProfile(response)) {
      lastProfile = response;
      drawProfile();
    }
  } catch (err) {
    notifyError(err, `profile ${sample}`);
  }
}

function drawProfile(): void {
  const response = lastProfile;
  if (response === null) return;
  const ratio = sizeCanvas(ui.profileCanvas);
  drawLinePlot(
    ui.profileCanvas,
    [
      { x: response.z, y: response.re, label: "Re SLD" },
      { x: response.z, y: response.im, label: "Im SLD" },
      { x: response.z, y: response.msld, label: "magnetic" },
    ],
    {
      xLabel: "depth",
      title: `${response.sample} scattering-length density`,
      pixelRatio: ratio,
    },
  );
}

// -- chi-squared trace -------------------------------------------------------

function drawChi2(): void {
  if (store.chi2Trace.length === 0) return;
  ui.fitPanel.hidden = false;
  const ratio = sizeCanvas(ui.chi2Canvas);
  const x = store.chi2Trace.map((p) => p.iteration);
  const y = store.chi2Trace.map((p) => p.chi2);
  let lo = Infinity;
  let hi = -Infinity;
  for (const v of y) {
    if (v > 0 && v < lo) lo = v;
    if (v > hi) hi = v;
  }
  const ylog = lo < Infinity && hi / lo > 50;
  drawLinePlot(ui.chi2Canvas, [{ x, y, label: "χ²" }], {
    ylog,
    xLabel: "iteration",
    pixelRatio: ratio,
  });
}

// -- render coalescing (never block on a burst of fit events) ----------------

let renderQueued = false;

function renderAll(): void {
  renderStatus();
  syncAllParamRows();
  drawChi2();
}

function scheduleRender(): void {
  if (renderQueued) return;
  renderQueued = true;
  requestAnimationFrame(() => {
    renderQueued = false;
    renderAll();
  });
}

// -- session refresh ---------------------------------------------------------

/** Update chi-squared and fit state without clobbering in-progress edits. */
async function refreshModels(): Promise<void> {
  try {
    const info = await client.session();
    store.models = info.models;
    store.fitRunning = info.fit.running;
    store.fitStatus = info.fit.status;
    store.ackRevision(info.revision);
    renderStatus();
  } catch (err) {
    notifyError(err, "session");
  }
}

async function reloadSession(): Promise<void> {
  const info = await client.session();
  const sameParams =
    info.parameters.length === store.paramOrder.length &&
    info.parameters.every((p, i) => p.id === store.paramOrder[i]);
  store.applySession(info);
  if (sameParams) syncAllParamRows();
  else buildParamRows();
  renderStatus();
}

// -- fit lifecycle -----------------------------------------------------------

let eventsAbort: AbortController | null = null;

function subscribeFitEvents(): void {
  // one live subscription per fit; progress arrives already coalesced
  eventsAbort?.abort();
  const controller = new AbortController();
  eventsAbort = controller;
  void (async () => {
    try {
      for await (const event of client.fitEvents(controller.signal)) {
        store.applyFitEvent(event);
        scheduleRender();
        if (event.type === "progress") {
          void refreshCurve();
          void refreshProfile();
        } else {
          await reloadSession();
          await refreshCurve();
          await refreshProfile();
          notify(`fit ${event.status}`, "info");
        }
      }
    } catch (err) {
      if (!controller.signal.aborted) notifyError(err, "fit events");
    }
  })();
}

async function startFit(): Promise<void> {
  try {
    const { revision } = await client.startFit({});
    store.beginFit(revision);
    ui.fitPanel.hidden = false;
    renderAll();
    subscribeFitEvents();
  } catch (err) {
    notifyError(err, "fit");
    void refreshModels();
  }
}

async function interruptFit(): Promise<void> {
  try {
    await client.interruptFit();
  } catch (err) {
    notifyError(err, "interrupt");
  }
}

// -- snapshots ---------------------------------------------------------------

async function saveSnapshot(): Promise<void> {
  try {
    const snapshot = await client.getSnapshot();
    const blob = new Blob([JSON.stringify(snapshot, null, 2)], {
      type: "application/json",
    });
    const link = document.createElement("a");
    link.href = URL.createObjectURL(blob);
    link.download = `${store.name || "session"}-snapshot.json`;
    link.click();
    URL.revokeObjectURL(link.href);
  } catch (err) {
    notifyError(err, "snapshot");
  }
}

async function loadSnapshot(file: File): Promise<void> {
  try {
    const doc: unknown = JSON.parse(await file.text());
    const { revision } = await client.putSnapshot(
      doc as Parameters<ApiClient["putSnapshot"]>[0],
    );
    store.ackRevision(revision);
    await reloadSession();
    await refreshCurve();
    await refreshProfile();
    notify("snapshot restored", "info");
  } catch (err) {
    notifyError(err, "snapshot");
  }
}

// -- wiring ------------------------------------------------------------------

function wireControls(): void {
  ui.btnFit.addEventListener("click", () => void startFit());
  ui.btnInterrupt.addEventListener("click", () => void interruptFit());
  ui.btnSave.addEventListener("click", () => void saveSnapshot());
  ui.btnLoad.addEventListener("click", () => ui.fileLoad.click());
  ui.fileLoad.addEventListener("change", () => {
    const file = ui.fileLoad.files?.[0];
    if (file !== undefined) void loadSnapshot(file);
    ui.fileLoad.value = "";
  });
  ui.functorSelect.addEventListener("change", () => {
    const functor = selectedFunctor();
    if (functor !== null) {
      ui.gridInput.value =
        gridByFunctor.get(functor.name) ?? defaultGrid(functor);
    }
    void refreshCurve();
  });
  ui.gridInput.addEventListener("change", () => {
    const functor = selectedFunctor();
    if (functor !== null) {
      gridByFunctor.set(functor.name, ui.gridInput.value.trim());
    }
    void refreshCurve();
  });
  ui.logToggle.addEventListener("change", () => drawCurve());
  ui.btnRefresh.addEventListener("click", () => void refreshCurve());
  ui.sampleSelect.addEventListener("change", () => void refreshProfile());
  const redraw = debounce(() => {
    drawCurve();
    drawProfile();
    drawChi2();
  }, 150);
  window.addEventListener("resize", () => redraw());
}

async function init(): Promise<void> {
  wireControls();
  let loaded = false;
  while (!loaded) {
    try {
      await reloadSession();
      loaded = true;
    } catch (err) {
      notifyError(err, "session");
      await new Promise((resolve) => setTimeout(resolve, 2000));
    }
  }
  for (const f of store.functors) {
    const option = document.createElement("option");
    option.value = f.name;
    option.textContent = `${f.name} (${f.kind})`;
    ui.functorSelect.append(option);
  }
  const functor = selectedFunctor();
  if (functor !== null) ui.gridInput.value = defaultGrid(functor);
  if (store.samples.length > 0) {
    ui.profilePanel.hidden = false;
    for (const name of store.samples) {
      const option = document.createElement("option");
      option.value = name;
      option.textContent = name;
      ui.sampleSelect.append(option);
    }
  }
  renderAll();
  await refreshCurve();
  await refreshProfile();
  if (store.fitRunning) {
    ui.fitPanel.hidden = false;
    subscribeFitEvents();
  }
}

void init();
