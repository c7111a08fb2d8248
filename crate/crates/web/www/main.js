import init, { reading_order, bubble_split, fit_lettering } from "./pkg/manga_layout_web.js";

const $ = (id) => document.getElementById(id);
const rect = (b) => ({ x: b[0], y: b[1], w: b[2], h: b[3] });

function setStatus(id, text, good) {
  const el = $(id);
  el.textContent = text;
  el.className = "status " + (good ? "ok" : "bad");
}

function drawOrder() {
  const seed = Number($("order-seed").value) >>> 0;
  const demo = JSON.parse(reading_order(seed));
  const ctx = $("order-canvas").getContext("2d");
  ctx.fillStyle = "#fff";
  ctx.fillRect(0, 0, 400, 560);
  if (demo.error) {
    setStatus("order-status", demo.error, false);
    return;
  }
  ctx.lineWidth = 2;
  ctx.font = "bold 28px system-ui";
  for (const f of demo.frames) {
    const r = rect(f.bbox);
    ctx.strokeStyle = "#222";
    ctx.strokeRect(r.x, r.y, r.w, r.h);
    ctx.fillStyle = "#c8d4e8";
    ctx.fillText(String(f.rank + 1), r.x + r.w / 2 - 8, r.y + r.h / 2 + 10);
  }
  ctx.font = "12px system-ui";
  for (const t of demo.texts) {
    const r = rect(t.bbox);
    ctx.fillStyle = t.order === t.truth ? "rgba(40,140,70,0.35)" : "rgba(200,40,30,0.45)";
    ctx.fillRect(r.x, r.y, r.w, r.h);
    ctx.fillStyle = "#000";
    ctx.fillText(String(t.order + 1), r.x + 2, r.y + 12);
  }
  const verdict = demo.correct ? "order matches the generator's truth" : "order differs from the truth";
  setStatus("order-status", `${demo.frames.length} frames, ${demo.texts.length} texts\n${verdict}`, demo.correct);
}

const PALETTE = [
  [255, 255, 255],
  [120, 180, 255],
  [255, 170, 110],
  [150, 220, 140],
  [230, 140, 220],
];

function drawSplit() {
  const demo = JSON.parse(
    bubble_split(
      Number($("split-dx").value),
      Number($("split-gap").value),
      Number($("split-cu").value),
      Number($("split-cl").value),
    ),
  );
  const { width: w, height: h } = demo;
  const image = new ImageData(w, h);
  for (let i = 0; i < w * h; i++) {
    const v = demo.pixels[i];
    const label = demo.labels[i];
    const tint = label ? PALETTE[((label - 1) % (PALETTE.length - 1)) + 1] : PALETTE[0];
    const a = label ? 0.45 : 0;
    image.data[4 * i] = v * (1 - a) + tint[0] * a;
    image.data[4 * i + 1] = v * (1 - a) + tint[1] * a;
    image.data[4 * i + 2] = v * (1 - a) + tint[2] * a;
    image.data[4 * i + 3] = 255;
  }
  const canvas = $("split-canvas");
  const ctx = canvas.getContext("2d");
  const scale = 2;
  const off = new OffscreenCanvas(w, h);
  off.getContext("2d").putImageData(image, 0, 0);
  ctx.imageSmoothingEnabled = false;
  ctx.fillStyle = "#fff";
  ctx.fillRect(0, 0, canvas.width, canvas.height);
  ctx.drawImage(off, 0, 0, w * scale, h * scale);
  ctx.lineWidth = 1;
  ctx.strokeStyle = "#d02020";
  for (const l of demo.lines) {
    const r = rect(l);
    ctx.strokeRect(r.x * scale, r.y * scale, r.w * scale, r.h * scale);
  }
  ctx.strokeStyle = "#0050ff";
  ctx.lineWidth = 2;
  for (const c of demo.cuts) {
    ctx.beginPath();
    if (c.axis === "horizontal") {
      ctx.moveTo(0, (c.coord + 0.5) * scale);
      ctx.lineTo(w * scale, (c.coord + 0.5) * scale);
    } else {
      ctx.moveTo((c.coord + 0.5) * scale, 0);
      ctx.lineTo((c.coord + 0.5) * scale, h * scale);
    }
    ctx.stroke();
  }
  if (demo.error) {
    setStatus("split-status", demo.error, false);
  } else {
    const cuts = demo.cuts.map((c) => `${c.axis} cut at ${c.coord}, ${c.length} px inside`).join("\n");
    const note = demo.no_separating_cut ? "\nno straight cut separates the paragraphs" : "";
    setStatus("split-status", `${demo.lines.length} lines in ${demo.groups.length} paragraphs\n${cuts}${note}`, !demo.no_separating_cut);
  }
}

function drawLettering() {
  const demo = JSON.parse(fit_lettering($("letter-text").value, Number($("letter-w").value), Number($("letter-h").value)));
  const ctx = $("letter-canvas").getContext("2d");
  ctx.fillStyle = "#888";
  ctx.fillRect(0, 0, 400, 400);
  const image = ctx.getImageData(0, 0, demo.width, demo.height);
  for (let i = 0; i < demo.width * demo.height; i++) {
    if (demo.mask[i]) {
      image.data[4 * i] = image.data[4 * i + 1] = image.data[4 * i + 2] = 255;
    }
  }
  ctx.putImageData(image, 0, 0);
  if (demo.error) {
    setStatus("letter-status", demo.error, false);
    return;
  }
  const r = rect(demo.rect);
  ctx.strokeStyle = "#3a7";
  ctx.setLineDash([4, 3]);
  ctx.strokeRect(r.x, r.y, r.w, r.h);
  ctx.setLineDash([]);
  ctx.fillStyle = "#111";
  for (const g of demo.glyphs) {
    const c = rect(g);
    ctx.fillRect(c.x + c.w * 0.1, c.y + c.h * 0.1, c.w * 0.8, c.h * 0.8);
  }
  const lines = demo.lines.map((l) => `  ${l}`).join("\n");
  setStatus("letter-status", `font size ${demo.font_size}${demo.overflow ? " (overflow)" : ""}\n${lines}`, !demo.overflow);
}

await init();
$("order-next").addEventListener("click", () => {
  $("order-seed").value = Number($("order-seed").value) + 1;
  drawOrder();
});
$("order-seed").addEventListener("input", drawOrder);
for (const id of ["split-dx", "split-gap", "split-cu", "split-cl"]) $(id).addEventListener("input", drawSplit);
for (const id of ["letter-text", "letter-w", "letter-h"]) $(id).addEventListener("input", drawLettering);
drawOrder();
drawSplit();
drawLettering();
