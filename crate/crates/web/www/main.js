import init, { Session } from "./pkg/dyadic_web.js";

const $ = (id) => document.getElementById(id);
const palette = ["#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02", "#a6761d", "#666", "#1f78b4", "#b2df8a"];

let session = null;
let centers = null;
let noses = null;
let planted = null;
let decoded = null;

function fail(e) {
  $("status").textContent = String(e);
}

function drawArena(t) {
  const c = $("arena").getContext("2d");
  const s = c.canvas.width;
  c.clearRect(0, 0, s, s);
  if (!centers) return;
  const tail = 90;
  for (let a = 0; a < 2; a++) {
    c.strokeStyle = a === 0 ? "#999" : "#d8b4b4";
    c.beginPath();
    for (let i = Math.max(0, t - tail); i <= t; i++) {
      const x = centers[4 * i + 2 * a] * s;
      const y = centers[4 * i + 2 * a + 1] * s;
      i === Math.max(0, t - tail) ? c.moveTo(x, y) : c.lineTo(x, y);
    }
    c.stroke();
    const bx = centers[4 * t + 2 * a] * s, by = centers[4 * t + 2 * a + 1] * s;
    const nx = noses[4 * t + 2 * a] * s, ny = noses[4 * t + 2 * a + 1] * s;
    c.strokeStyle = c.fillStyle = a === 0 ? "#333" : "#b22";
    c.lineWidth = 3;
    c.beginPath(); c.moveTo(bx, by); c.lineTo(nx, ny); c.stroke();
    c.lineWidth = 1;
    c.beginPath(); c.arc(bx, by, 5, 0, 2 * Math.PI); c.fill();
  }
  c.fillStyle = palette[planted[t]];
  c.fillRect(8, 8, 14, 14);
  c.fillStyle = "#222";
  c.fillText(`state ${planted[t]}`, 28, 19);
}

function drawEthogram(t) {
  const c = $("ethogram").getContext("2d");
  const w = c.canvas.width;
  c.clearRect(0, 0, w, c.canvas.height);
  if (!planted) return;
  const rows = decoded ? [planted, decoded] : [planted];
  const n = planted.length;
  rows.forEach((labels, r) => {
    for (let px = 0; px < w; px++) {
      c.fillStyle = palette[labels[Math.floor((px * n) / w)] % palette.length];
      c.fillRect(px, 5 + r * 42, 1, 36);
    }
  });
  c.fillStyle = "#000";
  c.fillRect(Math.floor((t * w) / n), 0, 1, c.canvas.height);
}

function redraw() {
  const t = Number($("scrub").value);
  drawArena(t);
  drawEthogram(t);
}

function generate() {
  try {
    session?.free();
    session = new Session(Number($("frames").value), Number($("seed").value));
    centers = session.centers();
    noses = session.noses();
    planted = session.planted();
    decoded = null;
    $("scrub").max = session.frames() - 1;
    $("scrub").value = 0;
    $("score").textContent = "";
    $("status").textContent = "";
    redraw();
  } catch (e) { fail(e); }
}

function segment() {
  if (!session) return;
  try {
    const score = session.segment(Number($("k").value), Number($("hmmseed").value));
    decoded = session.decoded();
    $("score").textContent = `accuracy ${score.accuracy.toFixed(3)}, NMI ${score.nmi.toFixed(3)}`;
    score.free();
    redraw();
  } catch (e) { fail(e); }
}

function peth() {
  if (!session) return;
  try {
    const p = session.peth(Number($("state").value), Number($("base").value), Number($("peak").value), Number($("seed").value));
    const time = p.time_s, mean = p.mean, sem = p.sem;
    $("events").textContent = `${p.n_events} onsets`;
    p.free();
    const c = $("pethplot").getContext("2d");
    const w = c.canvas.width, h = c.canvas.height, pad = 30;
    c.clearRect(0, 0, w, h);
    if (time.length === 0) return;
    const top = Math.max(1, ...mean.map((m, i) => m + sem[i]));
    const bw = (w - 2 * pad) / time.length;
    const y = (v) => h - pad - (v / top) * (h - 2 * pad);
    for (let i = 0; i < time.length; i++) {
      c.fillStyle = time[i] >= 0 ? "#d95f02" : "#999";
      c.fillRect(pad + i * bw, y(mean[i]), bw - 1, y(0) - y(mean[i]));
      c.fillStyle = "#222";
      c.fillRect(pad + (i + 0.5) * bw, y(mean[i] + sem[i]), 1, y(mean[i] - sem[i]) - y(mean[i] + sem[i]));
    }
    c.fillStyle = "#222";
    c.fillText(`${top.toFixed(1)} Hz`, 0, pad - 4);
    c.fillText(`${time[0].toFixed(1)} s`, pad, h - 10);
    c.fillText("0 s", w / 2 - 6, h - 10);
  } catch (e) { fail(e); }
}

await init();
$("generate").onclick = generate;
$("segment").onclick = segment;
$("peth").onclick = peth;
$("scrub").oninput = redraw;
generate();
