import init, { Demo, opacity_curves } from "./pkg/gsdf_web.js";

const $ = (id) => document.getElementById(id);
const num = (id) => parseFloat($(id).value);
let demo = null;
let yaw = 0.6, pitch = 0.35;

function blit(canvas, bytes, size) {
  const ctx = canvas.getContext("2d");
  const img = new ImageData(new Uint8ClampedArray(bytes), size, size);
  const tmp = new OffscreenCanvas(size, size);
  tmp.getContext("2d").putImageData(img, 0, 0);
  ctx.imageSmoothingEnabled = false;
  ctx.drawImage(tmp, 0, 0, canvas.width, canvas.height);
}

function showValues() {
  for (const o of document.querySelectorAll("output")) o.textContent = $(o.htmlFor).value;
}

function rebuild() {
  demo?.free();
  demo = new Demo($("shape").value, num("count") | 0, num("jitter"), 7n);
  drawView();
  drawSlice();
}

function drawView() {
  const size = 160;
  const t0 = performance.now();
  const px = demo.render(yaw, pitch, size, $("tight").checked, num("beta"), num("scale"));
  blit($("view"), px, size);
  $("status").textContent = `${demo.count()} splats, ${(performance.now() - t0).toFixed(0)} ms per frame`;
}

function drawSlice() {
  blit($("slice"), demo.sdf_slice(num("z"), 128), 128);
}

function drawCurves() {
  const c = $("curves"), ctx = c.getContext("2d");
  const range = 0.3, n = 241;
  const data = opacity_curves(num("beta"), num("s"), range, n);
  ctx.clearRect(0, 0, c.width, c.height);
  const x = (f) => ((f + range) / (2 * range)) * (c.width - 20) + 10;
  ctx.strokeStyle = "#ccc";
  ctx.beginPath(); ctx.moveTo(x(0), 0); ctx.lineTo(x(0), c.height); ctx.stroke();
  let wmax = 1e-12;
  for (let k = 0; k < n; k++) wmax = Math.max(wmax, data[3 * k + 2]);
  const plot = (col, norm, color) => {
    ctx.strokeStyle = color; ctx.lineWidth = 2; ctx.beginPath();
    for (let k = 0; k < n; k++) {
      const y = c.height - 10 - (data[3 * k + col] / norm) * (c.height - 20);
      k ? ctx.lineTo(x(data[3 * k]), y) : ctx.moveTo(x(data[3 * k]), y);
    }
    ctx.stroke();
  };
  plot(1, 0.25, "#c33");
  plot(2, wmax, "#36c");
  ctx.fillStyle = "#555";
  ctx.fillText(`f = -${range}`, 10, 12);
  ctx.fillText(`+${range}`, c.width - 34, 12);
}

function wire() {
  for (const id of ["shape", "count", "jitter"]) $(id).addEventListener("change", rebuild);
  for (const id of ["tight", "scale"]) $(id).addEventListener("input", drawView);
  $("beta").addEventListener("input", () => { drawView(); drawCurves(); });
  $("s").addEventListener("input", drawCurves);
  $("z").addEventListener("input", drawSlice);
  document.addEventListener("input", showValues);
  const view = $("view");
  let drag = null;
  view.addEventListener("pointerdown", (e) => { drag = [e.clientX, e.clientY]; view.setPointerCapture(e.pointerId); });
  view.addEventListener("pointerup", () => { drag = null; });
  view.addEventListener("pointermove", (e) => {
    if (!drag) return;
    yaw -= (e.clientX - drag[0]) * 0.01;
    pitch = Math.max(-1.4, Math.min(1.4, pitch + (e.clientY - drag[1]) * 0.01));
    drag = [e.clientX, e.clientY];
    drawView();
  });
}

init().then(() => {
  wire();
  showValues();
  rebuild();
  drawCurves();
}).catch((e) => { $("status").textContent = `failed to load: ${e}`; });
