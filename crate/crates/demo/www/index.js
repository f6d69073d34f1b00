import init, { bumpSlice, gateCurve, decisionCurve } from "./pkg/morphogate_demo.js";

const N = 32;

function slider(id) {
  const el = document.getElementById(id);
  const out = el.parentElement.querySelector("span");
  if (out) out.textContent = el.value;
  return Number(el.value);
}

function guard(errId, fn) {
  const box = document.getElementById(errId);
  try {
    fn();
    box.textContent = "";
  } catch (e) {
    box.textContent = String(e.message ?? e);
  }
}

function drawBump() {
  guard("b-err", () => {
    const s = bumpSlice(N, slider("b-radius"), slider("b-amp"), slider("b-sigma"));
    const cv = document.getElementById("b-canvas");
    const ctx = cv.getContext("2d");
    const scale = Math.max(1e-6, ...Array.from(s, Math.abs));
    const px = cv.width / N;
    for (let i = 0; i < N; i++) {
      for (let j = 0; j < N; j++) {
        const v = s[i * N + j] / scale;
        const r = v > 0 ? 255 : Math.round(255 * (1 + v));
        const b = v < 0 ? 255 : Math.round(255 * (1 - v));
        const g = Math.round(255 * (1 - Math.abs(v)));
        ctx.fillStyle = `rgb(${r},${g},${b})`;
        ctx.fillRect(j * px, i * px, px, px);
      }
    }
    ctx.fillStyle = "#000";
    ctx.fillText(`max |lJ| = ${scale.toFixed(3)}`, 6, 14);
  });
}

// xs, ys in data units; box = [x0, x1, y0, y1]
function plot(ctx, xs, ys, box, style, dash = []) {
  const { width: w, height: h } = ctx.canvas;
  const [x0, x1, y0, y1] = box;
  ctx.strokeStyle = style;
  ctx.setLineDash(dash);
  ctx.beginPath();
  xs.forEach((x, k) => {
    const px = 30 + ((x - x0) / (x1 - x0)) * (w - 40);
    const py = h - 20 - ((ys[k] - y0) / (y1 - y0)) * (h - 30);
    k ? ctx.lineTo(px, py) : ctx.moveTo(px, py);
  });
  ctx.stroke();
  ctx.setLineDash([]);
}

function axes(ctx, label) {
  const { width: w, height: h } = ctx.canvas;
  ctx.clearRect(0, 0, w, h);
  ctx.strokeStyle = "#999";
  ctx.strokeRect(30, 10, w - 40, h - 30);
  ctx.fillStyle = "#000";
  ctx.fillText(label, 34, 22);
}

function drawGate() {
  guard("g-err", () => {
    const lo = -8, hi = 8, steps = 161;
    const w = gateCurve(slider("g-prior"), slider("g-alpha"), slider("g-beta"), lo, hi, steps);
    const xs = Array.from({ length: steps }, (_, k) => lo + ((hi - lo) * k) / (steps - 1));
    const ctx = document.getElementById("g-canvas").getContext("2d");
    axes(ctx, "gate w in (0, 1) against offset in [-8, 8]");
    plot(ctx, xs, Array.from(w), [lo, hi, 0, 1], "#000");
  });
}

function drawDca() {
  guard("d-err", () => {
    const seed = BigInt(Math.max(0, Math.floor(Number(document.getElementById("d-seed").value) || 0)));
    const rows = decisionCurve(2000, slider("d-prev"), slider("d-sep"), seed);
    const t = [], model = [], all = [], none = [];
    for (let k = 0; k < rows.length; k += 4) {
      t.push(rows[k]);
      model.push(rows[k + 1]);
      all.push(rows[k + 2]);
      none.push(rows[k + 3]);
    }
    const top = Math.max(0.05, ...model, ...all);
    const box = [0, 1, -0.2 * top, top * 1.05];
    const ctx = document.getElementById("d-canvas").getContext("2d");
    axes(ctx, "net benefit against threshold");
    plot(ctx, t, all, box, "#aaa");
    plot(ctx, t, none, box, "#000", [4, 4]);
    plot(ctx, t, model, box, "#000");
  });
}

await init();
for (const [prefix, draw] of [["b-", drawBump], ["g-", drawGate], ["d-", drawDca]]) {
  document.querySelectorAll(`input[id^="${prefix}"]`).forEach((el) => el.addEventListener("input", draw));
  draw();
}
