// SPDX-License-Identifier: Apache-2.0

import init, { adapt_scene, gradient_check } from "./pkg/gs_bias_wasm.js";

const form = document.getElementById("controls");
const errorBox = document.getElementById("error");
const MODE_LABELS = { zeroshot: "zero-shot", global: "global", spatial: "spatial", both: "global + spatial" };

function params() {
  const p = {};
  for (const input of form.querySelectorAll("fieldset:not(:last-child) input")) {
    p[input.name] = Number(input.value);
    input.nextElementSibling.value = input.value;
  }
  p.object_class = 0;
  return p;
}

function heat(t) {
  // dark blue to yellow
  const r = Math.round(255 * Math.min(1, 1.8 * t));
  const g = Math.round(255 * Math.min(1, Math.max(0, 1.6 * t - 0.3)));
  const b = Math.round(255 * Math.max(0, 0.55 - t));
  return `rgb(${r},${g},${b})`;
}

function drawMap(map, threshold) {
  const canvas = document.getElementById("map");
  const ctx = canvas.getContext("2d");
  const n = map.side;
  const cell = canvas.width / n;
  const lo = Math.min(...map.values);
  const hi = Math.max(...map.values);
  const span = hi - lo;
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  map.values.forEach((v, i) => {
    const t = span > 0 ? (v - lo) / span : 0;
    ctx.fillStyle = heat(t);
    ctx.fillRect((i % n) * cell, Math.floor(i / n) * cell, cell, cell);
  });
  ctx.strokeStyle = "rgba(255,255,255,0.8)";
  ctx.setLineDash([3, 3]);
  map.object_mask.forEach((inside, i) => {
    if (inside) ctx.strokeRect((i % n) * cell + 1, Math.floor(i / n) * cell + 1, cell - 2, cell - 2);
  });
  ctx.setLineDash([]);
  ctx.fillStyle = "#fff";
  ctx.font = `${Math.max(8, cell * 0.35)}px system-ui`;
  ctx.textAlign = "center";
  ctx.textBaseline = "middle";
  map.topk.forEach((i, rank) => {
    ctx.fillText(String(rank + 1), (i % n + 0.5) * cell, (Math.floor(i / n) + 0.5) * cell);
  });
  const hits = map.topk.filter((i) => map.object_mask[i]).length;
  document.getElementById("map-note").textContent =
    `Numbers rank the ${map.topk.length} selected patches; dashed cells belong to the object ` +
    `(${map.object_regions} patches). ${hits} of the selected patches lie on the object. ` +
    `Significant regions above ${threshold}: ${map.significant_regions}.`;
}

function drawCurves(global, spatial) {
  const canvas = document.getElementById("curves");
  const ctx = canvas.getContext("2d");
  const w = canvas.width, h = canvas.height, pad = 36;
  ctx.clearRect(0, 0, w, h);
  const series = [
    ["global", global?.entropy ?? [], "#d0672a"],
    ["spatial", spatial?.entropy ?? [], "#2a8fd0"],
  ];
  const all = series.flatMap(([, s]) => s);
  if (all.length === 0) return;
  const top = Math.max(...all) * 1.05 || 1;
  const steps = Math.max(...series.map(([, s]) => s.length)) - 1 || 1;
  const x = (i) => pad + (i / steps) * (w - pad - 10);
  const y = (v) => h - pad - (v / top) * (h - pad - 10);
  ctx.strokeStyle = "#999";
  ctx.beginPath();
  ctx.moveTo(pad, 10);
  ctx.lineTo(pad, h - pad);
  ctx.lineTo(w - 10, h - pad);
  ctx.stroke();
  ctx.fillStyle = "#555";
  ctx.font = "11px system-ui";
  ctx.textAlign = "center";
  for (let i = 0; i <= steps; i++) ctx.fillText(String(i), x(i), h - pad + 14);
  ctx.fillText("step", w / 2, h - 6);
  ctx.textAlign = "right";
  ctx.fillText(top.toFixed(2), pad - 4, y(top) + 4);
  ctx.fillText("0", pad - 4, y(0) + 4);
  series.forEach(([name, s, color], k) => {
    ctx.strokeStyle = color;
    ctx.fillStyle = color;
    ctx.lineWidth = 2;
    ctx.beginPath();
    s.forEach((v, i) => (i === 0 ? ctx.moveTo(x(i), y(v)) : ctx.lineTo(x(i), y(v))));
    ctx.stroke();
    s.forEach((v, i) => ctx.fillRect(x(i) - 2, y(v) - 2, 4, 4));
    ctx.textAlign = "left";
    ctx.fillText(name, w - 70, 20 + 14 * k);
  });
  ctx.lineWidth = 1;
}

function drawPredictions(r) {
  const rows = r.modes.map((m) => {
    const p = m.probabilities[m.pred];
    const ok = m.pred === r.label;
    return `<tr><td>${MODE_LABELS[m.mode]}</td>` +
      `<td class="${ok ? "ok" : "bad"}">${r.names[m.pred]}</td>` +
      `<td style="width:40%"><div class="bar" style="width:${(100 * p).toFixed(1)}%"></div></td>` +
      `<td>${p.toFixed(3)}</td></tr>`;
  });
  document.getElementById("preds").innerHTML =
    "<tr><th>mode</th><th>class</th><th colspan=2>probability</th></tr>" + rows.join("");
  const fmt = (b) => b ? b.bias.map((v) => v.toFixed(2)).join(", ") : "n/a";
  document.getElementById("pred-note").textContent =
    `True class ${r.names[r.label]}, distractor ${r.names[r.distractor]}. ` +
    `Global bias [${fmt(r.global)}] from views ${r.global?.kept.join(", ")}. ` +
    `Spatial bias [${fmt(r.spatial)}].`;
}

function update() {
  const p = params();
  try {
    const r = JSON.parse(adapt_scene(JSON.stringify(p)));
    errorBox.textContent = "";
    drawMap(r.map, p.threshold);
    drawCurves(r.global, r.spatial);
    drawPredictions(r);
  } catch (e) {
    errorBox.textContent = String(e.message ?? e);
  }
}

function runGradcheck() {
  const seed = Number(form.gc_seed.value);
  const trials = Number(form.gc_trials.value);
  const out = document.getElementById("gc-result");
  try {
    const r = JSON.parse(gradient_check(seed, trials));
    out.innerHTML = `<span class="${r.passed ? "ok" : "bad"}">${r.passed ? "pass" : "fail"}</span>: ` +
      `max relative error ${r.max_rel_error.toExponential(2)} over ${r.trials} trials ` +
      `(worst ${r.worst_shape[0]}×${r.worst_shape[1]}).`;
  } catch (e) {
    out.textContent = String(e.message ?? e);
  }
}

await init();
form.addEventListener("input", update);
document.getElementById("gradcheck").addEventListener("click", runGradcheck);
update();
