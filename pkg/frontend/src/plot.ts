/**
 * Canvas plotting: 1D curves with linear or log ordinate, and log-color
 * heatmaps for two-variable grids.
 *
 * Log display never raises on non-positive data: values are clipped up to a
 * floor three decades below the smallest positive point, matching the
 * package's matplotlib helpers, so detector zeros and model nulls stay
 * visible at the bottom of the axis instead of vanishing or erroring.
 */

// -- pure helpers (unit-tested without a canvas) -----------------------------

/** Floor used when log-displaying data that may contain zeros or negatives. */
export function logFloor(values: ArrayLike<number>): number {
  let minPositive = Infinity;
  for (let i = 0; i < values.length; i++) {
    const v = values[i];
    if (Number.isFinite(v) && v > 0 && v < minPositive) minPositive = v;
  }
  return minPositive === Infinity ? 1e-30 : minPositive * 1e-3;
}

/**
 * Clip values for log display.  Finite entries are raised to the floor when
 * non-positive; non-finite entries pass through (drawn as gaps).  The result
 * always has the same length as the input.
 */
export function logClip(values: ArrayLike<number>): number[] {
  const floor = logFloor(values);
  const out = new Array<number>(values.length);
  for (let i = 0; i < values.length; i++) {
    const v = values[i];
    out[i] = Number.isFinite(v) ? Math.max(v, floor) : v;
  }
  return out;
}

/** [min, max] over the finite entries, or null if there are none. */
export function finiteExtent(values: ArrayLike<number>): [number, number] | null {
  let lo = Infinity;
  let hi = -Infinity;
  for (let i = 0; i < values.length; i++) {
    const v = values[i];
    if (!Number.isFinite(v)) continue;
    if (v < lo) lo = v;
    if (v > hi) hi = v;
  }
  return lo <= hi ? [lo, hi] : null;
}

/** Round a span down to a 1/2/5 x 10^k tick step. */
export function niceStep(span: number, maxTicks: number): number {
  const rough = span / Math.max(1, maxTicks);
  const power = Math.pow(10, Math.floor(Math.log10(rough)));
  const scaled = rough / power;
  if (scaled <= 1) return power;
  if (scaled <= 2) return 2 * power;
  if (scaled <= 5) return 5 * power;
  return 10 * power;
}

/** Tick positions covering [lo, hi] at a 1/2/5 step. */
export function niceTicks(lo: number, hi: number, maxTicks = 6): number[] {
  if (!(hi > lo)) return [lo];
  const step = niceStep(hi - lo, maxTicks);
  const first = Math.ceil(lo / step) * step;
  const ticks: number[] = [];
  for (let v = first; v <= hi + step * 1e-9; v += step) {
    ticks.push(Math.abs(v) < step * 1e-9 ? 0 : v);
  }
  return ticks;
}

/** Decade ticks covering a positive range for a log axis. */
export function decadeTicks(lo: number, hi: number): number[] {
  const ticks: number[] = [];
  const first = Math.ceil(Math.log10(lo) - 1e-9);
  const last = Math.floor(Math.log10(hi) + 1e-9);
  for (let e = first; e <= last; e++) ticks.push(Math.pow(10, e));
  // a log axis narrower than one decade still needs reference lines
  return ticks.length >= 2 ? ticks : niceTicks(lo, hi, 4);
}

const VIRIDIS_ANCHORS: Array<[number, number, number]> = [
  [68, 1, 84],
  [71, 44, 122],
  [59, 81, 139],
  [44, 113, 142],
  [33, 144, 141],
  [39, 173, 129],
  [92, 200, 99],
  [170, 220, 50],
  [253, 231, 37],
];

/** Perceptual colormap sample for t in [0, 1] (clamped). */
export function viridis(t: number): [number, number, number] {
  const x = Math.min(1, Math.max(0, t)) * (VIRIDIS_ANCHORS.length - 1);
  const i = Math.min(VIRIDIS_ANCHORS.length - 2, Math.floor(x));
  const f = x - i;
  const a = VIRIDIS_ANCHORS[i];
  const b = VIRIDIS_ANCHORS[i + 1];
  return [
    Math.round(a[0] + (b[0] - a[0]) * f),
    Math.round(a[1] + (b[1] - a[1]) * f),
    Math.round(a[2] + (b[2] - a[2]) * f),
  ];
}

function formatTick(v: number): string {
  if (v === 0) return "0";
  const mag = Math.abs(v);
  if (mag >= 1e4 || mag < 1e-3) return v.toExponential(0).replace("e+", "e");
  return String(parseFloat(v.toPrecision(6)));
}

// -- canvas rendering --------------------------------------------------------

export interface LineSeries {
  x: ArrayLike<number>;
  y: ArrayLike<number>;
  color?: string;
  label?: string;
  /** Draw markers instead of a connected line (e.g. data points). */
  markers?: boolean;
}

export interface LinePlotOptions {
  ylog?: boolean;
  xLabel?: string;
  yLabel?: string;
  title?: string;
  pixelRatio?: number;
}

interface Frame {
  left: number;
  top: number;
  width: number;
  height: number;
}

const AXIS_COLOR = "#8a93a6";
const GRID_COLOR = "rgba(138, 147, 166, 0.18)";
const TEXT_COLOR = "#c7cdd9";
const SERIES_COLORS = ["#4fc3f7", "#ffb74d", "#aed581", "#f06292", "#b39ddb"];

function clear(ctx: CanvasRenderingContext2D): void {
  ctx.save();
  ctx.setTransform(1, 0, 0, 1, 0, 0);
  ctx.clearRect(0, 0, ctx.canvas.width, ctx.canvas.height);
  ctx.restore();
}

function frameFor(canvas: HTMLCanvasElement, r: number): Frame {
  return {
    left: 58 * r,
    top: 22 * r,
    width: canvas.width - 70 * r,
    height: canvas.height - 58 * r,
  };
}

function drawFrame(
  ctx: CanvasRenderingContext2D,
  frame: Frame,
  r: number,
  opts: LinePlotOptions,
): void {
  ctx.strokeStyle = AXIS_COLOR;
  ctx.lineWidth = r;
  ctx.strokeRect(frame.left, frame.top, frame.width, frame.height);
  ctx.fillStyle = TEXT_COLOR;
  ctx.font = `${11 * r}px system-ui, sans-serif`;
  if (opts.title) {
    ctx.textAlign = "center";
    ctx.textBaseline = "bottom";
    ctx.fillText(opts.title, frame.left + frame.width / 2, frame.top - 6 * r);
  }
  if (opts.xLabel) {
    ctx.textAlign = "center";
    ctx.textBaseline = "bottom";
    ctx.fillText(
      opts.xLabel,
      frame.left + frame.width / 2,
      ctx.canvas.height - 4 * r,
    );
  }
  if (opts.yLabel) {
    ctx.save();
    ctx.translate(12 * r, frame.top + frame.height / 2);
    ctx.rotate(-Math.PI / 2);
    ctx.textAlign = "center";
    ctx.textBaseline = "middle";
    ctx.fillText(opts.yLabel, 0, 0);
    ctx.restore();
  }
}

/** Draw 1D series on the canvas; log ordinate clips non-positive values. */
export function drawLinePlot(
  canvas: HTMLCanvasElement,
  series: LineSeries[],
  opts: LinePlotOptions = {},
): void {
  const ctx = canvas.getContext("2d");
  if (ctx === null) return;
  const r = opts.pixelRatio ?? 1;
  clear(ctx);
  const frame = frameFor(canvas, r);

  const allX: number[] = [];
  const preparedY: number[][] = [];
  for (const s of series) {
    for (let i = 0; i < s.x.length; i++) allX.push(s.x[i]);
    preparedY.push(opts.ylog ? logClip(s.y) : Array.from(s.y, Number));
  }
  const xExt = finiteExtent(allX);
  const yExt = finiteExtent(preparedY.flat());
  drawFrame(ctx, frame, r, opts);
  if (xExt === null || yExt === null) return;
  let [x0, x1] = xExt;
  if (x1 === x0) [x0, x1] = [x0 - 1, x1 + 1];
  let [y0, y1] = yExt;
  if (opts.ylog) {
    y0 = Math.log10(y0);
    y1 = Math.log10(y1);
  }
  if (y1 === y0) [y0, y1] = [y0 - 1, y1 + 1];
  const pad = (y1 - y0) * 0.05;
  y0 -= pad;
  y1 += pad;

  const px = (x: number) => frame.left + ((x - x0) / (x1 - x0)) * frame.width;
  const py = (y: number) => {
    const t = opts.ylog ? Math.log10(y) : y;
    return frame.top + frame.height - ((t - y0) / (y1 - y0)) * frame.height;
  };

  // ticks and grid
  ctx.font = `${10 * r}px system-ui, sans-serif`;
  ctx.fillStyle = TEXT_COLOR;
  for (const t of niceTicks(x0, x1, 7)) {
    const x = px(t);
    ctx.strokeStyle = GRID_COLOR;
    ctx.beginPath();
    ctx.moveTo(x, frame.top);
    ctx.lineTo(x, frame.top + frame.height);
    ctx.stroke();
    ctx.textAlign = "center";
    ctx.textBaseline = "top";
    ctx.fillText(formatTick(t), x, frame.top + frame.height + 4 * r);
  }
  const yTicks = opts.ylog
    ? decadeTicks(Math.pow(10, y0), Math.pow(10, y1))
    : niceTicks(y0, y1, 6);
  for (const t of yTicks) {
    const y = py(t);
    ctx.strokeStyle = GRID_COLOR;
    ctx.beginPath();
    ctx.moveTo(frame.left, y);
    ctx.lineTo(frame.left + frame.width, y);
    ctx.stroke();
    ctx.textAlign = "right";
    ctx.textBaseline = "middle";
    ctx.fillText(formatTick(t), frame.left - 5 * r, y);
  }

  // series
  ctx.save();
  ctx.beginPath();
  ctx.rect(frame.left, frame.top, frame.width, frame.height);
  ctx.clip();
  series.forEach((s, k) => {
    const color = s.color ?? SERIES_COLORS[k % SERIES_COLORS.length];
    const ys = preparedY[k];
    if (s.markers) {
      ctx.fillStyle = color;
      for (let i = 0; i < s.x.length; i++) {
        if (!Number.isFinite(s.x[i]) || !Number.isFinite(ys[i])) continue;
        ctx.beginPath();
        ctx.arc(px(s.x[i]), py(ys[i]), 1.8 * r, 0, 2 * Math.PI);
        ctx.fill();
      }
      return;
    }
    ctx.strokeStyle = color;
    ctx.lineWidth = 1.4 * r;
    ctx.beginPath();
    let open = false;
    for (let i = 0; i < s.x.length; i++) {
      if (!Number.isFinite(s.x[i]) || !Number.isFinite(ys[i])) {
        open = false;
        continue;
      }
      const x = px(s.x[i]);
      const y = py(ys[i]);
      if (open) ctx.lineTo(x, y);
      else ctx.moveTo(x, y);
      open = true;
    }
    ctx.stroke();
  });
  ctx.restore();

  // legend
  let ly = frame.top + 6 * r;
  ctx.font = `${10 * r}px system-ui, sans-serif`;
  series.forEach((s, k) => {
    if (!s.label) return;
    const color = s.color ?? SERIES_COLORS[k % SERIES_COLORS.length];
    ctx.fillStyle = color;
    ctx.textAlign = "right";
    ctx.textBaseline = "top";
    ctx.fillText(s.label, frame.left + frame.width - 8 * r, ly);
    ly += 13 * r;
  });
}

export interface HeatmapOptions {
  log?: boolean;
  xLabel?: string;
  yLabel?: string;
  title?: string;
  pixelRatio?: number;
}

/**
 * Draw a two-variable grid as a colormapped image.  `values` is row-major
 * with the first variable slowest, matching the curve endpoint's layout.
 */
export function drawHeatmap(
  canvas: HTMLCanvasElement,
  xs: ArrayLike<number>,
  ys: ArrayLike<number>,
  values: ArrayLike<number>,
  opts: HeatmapOptions = {},
): void {
  const ctx = canvas.getContext("2d");
  if (ctx === null) return;
  const r = opts.pixelRatio ?? 1;
  clear(ctx);
  const frame = frameFor(canvas, r);
  drawFrame(ctx, frame, r, opts);
  const nx = xs.length;
  const ny = ys.length;
  if (nx === 0 || ny === 0 || values.length !== nx * ny) return;

  const scale = opts.log ?? true;
  const prepared = scale ? logClip(values) : Array.from(values, Number);
  const display = prepared.map((v) =>
    Number.isFinite(v) ? (scale ? Math.log10(v) : v) : NaN,
  );
  const ext = finiteExtent(display);
  if (ext === null) return;
  const [v0, v1] = ext;
  const span = v1 > v0 ? v1 - v0 : 1;

  const w = Math.max(1, Math.round(frame.width));
  const h = Math.max(1, Math.round(frame.height));
  const image = ctx.createImageData(w, h);
  for (let row = 0; row < h; row++) {
    // canvas rows run top-down; the second variable increases upward
    const j = Math.min(ny - 1, Math.floor(((h - 1 - row) / h) * ny));
    for (let col = 0; col < w; col++) {
      const i = Math.min(nx - 1, Math.floor((col / w) * nx));
      const v = display[i * ny + j];
      const offset = (row * w + col) * 4;
      if (Number.isFinite(v)) {
        const [cr, cg, cb] = viridis((v - v0) / span);
        image.data[offset] = cr;
        image.data[offset + 1] = cg;
        image.data[offset + 2] = cb;
        image.data[offset + 3] = 255;
      } else {
        image.data[offset + 3] = 0;
      }
    }
  }
  ctx.putImageData(image, Math.round(frame.left), Math.round(frame.top));
  ctx.strokeStyle = AXIS_COLOR;
  ctx.lineWidth = r;
  ctx.strokeRect(frame.left, frame.top, frame.width, frame.height);

  // axis ticks (no grid lines over the image)
  ctx.font = `${10 * r}px system-ui, sans-serif`;
  ctx.fillStyle = TEXT_COLOR;
  const xExt = finiteExtent(xs);
  const yExt = finiteExtent(ys);
  if (xExt !== null) {
    for (const t of niceTicks(xExt[0], xExt[1], 7)) {
      const x =
        frame.left +
        ((t - xExt[0]) / (xExt[1] - xExt[0] || 1)) * frame.width;
      ctx.textAlign = "center";
      ctx.textBaseline = "top";
      ctx.fillText(formatTick(t), x, frame.top + frame.height + 4 * r);
    }
  }
  if (yExt !== null) {
    for (const t of niceTicks(yExt[0], yExt[1], 6)) {
      const y =
        frame.top +
        frame.height -
        ((t - yExt[0]) / (yExt[1] - yExt[0] || 1)) * frame.height;
      ctx.textAlign = "right";
      ctx.textBaseline = "middle";
      ctx.fillText(formatTick(t), frame.left - 5 * r, y);
    }
  }

  // value range note, since there is no colorbar
  ctx.textAlign = "left";
  ctx.textBaseline = "bottom";
  const lo = scale ? Math.pow(10, v0) : v0;
  const hi = scale ? Math.pow(10, v1) : v1;
  ctx.fillText(
    `${scale ? "log color" : "color"}: ${lo.toExponential(2)} … ${hi.toExponential(2)}`,
    frame.left + 4 * r,
    frame.top + frame.height - 4 * r,
  );
}
