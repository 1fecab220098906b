import init, { simulate, allocation_preview, soc_profile } from "./pkg/gridbound_demo.js";

const $ = (id) => document.getElementById(id);
const COLORS = { unmanaged: "#999", hierarchical: "#1f77b4", centralized: "#2ca02c" };

function numbers(text) {
  return text.split(",").map((s) => s.trim()).filter((s) => s !== "").map(Number);
}

function show(id, text, isError) {
  const el = $(id);
  el.textContent = text;
  el.className = isError ? "err" : "";
}

// Line chart of several series sharing one y axis.
function lines(canvas, series, yLabel) {
  const ctx = canvas.getContext("2d");
  const w = canvas.width, h = canvas.height, pad = 40;
  ctx.clearRect(0, 0, w, h);
  const all = series.flatMap((s) => s.values);
  if (all.length === 0) return;
  const lo = Math.min(0, ...all), hi = Math.max(...all) * 1.05 || 1;
  const n = Math.max(...series.map((s) => s.values.length));
  const x = (i) => pad + (i * (w - 2 * pad)) / Math.max(1, n - 1);
  const y = (v) => h - pad + ((v - lo) * (2 * pad - h)) / (hi - lo);
  ctx.strokeStyle = "#ccc";
  ctx.strokeRect(pad, pad / 2, w - 2 * pad, h - 1.5 * pad);
  ctx.fillStyle = "#444";
  ctx.fillText(hi.toFixed(1) + " " + yLabel, 2, pad / 2 + 10);
  ctx.fillText(lo.toFixed(1), 2, h - pad);
  let legend = pad;
  for (const s of series) {
    ctx.strokeStyle = s.color;
    ctx.setLineDash(s.dash || []);
    ctx.lineWidth = 2;
    ctx.beginPath();
    s.values.forEach((v, i) => (i ? ctx.lineTo(x(i), y(v)) : ctx.moveTo(x(i), y(v))));
    ctx.stroke();
    ctx.setLineDash([]);
    ctx.fillStyle = s.color;
    ctx.fillText(s.name, legend, h - 8);
    legend += ctx.measureText(s.name).width + 20;
  }
}

function runSimulation() {
  show("sim-out", "running...");
  // Let the message paint before the solver blocks the thread.
  setTimeout(() => {
    try {
      const r = JSON.parse(simulate(
        Number($("sim-houses").value), Number($("sim-slots").value), Number($("sim-seed").value),
        $("sim-profile").value, Number($("sim-deadline").value), $("sim-central").checked));
      const series = r.strategies.map((s) => ({ name: s.name, values: s.aggregate_kw, color: COLORS[s.name] }));
      series.push({ name: "substation high", values: r.substation_high_kw, color: "#d62728", dash: [6, 4] });
      lines($("sim-chart"), series, "kW");
      show("sim-out", r.summary);
    } catch (e) {
      show("sim-out", String(e), true);
    }
  }, 20);
}

function bars(canvas, forecast, low, high) {
  const ctx = canvas.getContext("2d");
  const w = canvas.width, h = canvas.height, pad = 30;
  ctx.clearRect(0, 0, w, h);
  const top = Math.max(1, ...forecast, ...high) * 1.1;
  const y = (v) => h - pad - (v * (h - 2 * pad)) / top;
  const slot = (w - 2 * pad) / forecast.length;
  forecast.forEach((f, i) => {
    const x0 = pad + i * slot + slot * 0.2, bw = slot * 0.6;
    ctx.fillStyle = "#cde";
    ctx.fillRect(x0, y(high[i]), bw, y(low[i]) - y(high[i]));
    ctx.strokeStyle = "#333";
    ctx.beginPath();
    ctx.moveTo(x0 - 6, y(f));
    ctx.lineTo(x0 + bw + 6, y(f));
    ctx.stroke();
    ctx.fillStyle = "#333";
    ctx.fillText(`house ${i}: [${low[i].toFixed(2)}, ${high[i].toFixed(2)}]`, x0, h - 8);
  });
  ctx.fillText("shaded: allowed range, line: forecast", pad, 14);
}

function runAllocation() {
  $("al-high-val").textContent = $("al-high").value + " kW";
  try {
    const forecast = numbers($("al-forecast").value);
    const r = JSON.parse(allocation_preview(JSON.stringify({
      forecast_kw: forecast,
      down_kw: numbers($("al-down").value),
      up_kw: numbers($("al-up").value),
      substation_low_kw: Number($("al-low").value),
      substation_high_kw: Number($("al-high").value),
    })));
    bars($("al-chart"), forecast, r.low_kw, r.high_kw);
    const sum = forecast.reduce((a, b) => a + b, 0);
    const lines = [`forecast total ${sum.toFixed(2)} kW`].concat(r.conflicts);
    show("al-out", lines.join("\n"));
  } catch (e) {
    show("al-out", String(e), true);
  }
}

function runSoc() {
  try {
    const cap = Number($("soc-cap").value);
    const r = JSON.parse(soc_profile(JSON.stringify({
      spec: {
        capacity_kwh: cap,
        min_rate_kw: 0,
        max_rate_kw: Number($("soc-rate").value),
        charge_eff: Number($("soc-ec").value),
        discharge_eff: Number($("soc-ed").value),
      },
      soc_kwh: Number($("soc-start").value),
      slot_minutes: Number($("soc-slot").value),
      net_kw: numbers($("soc-net").value),
    })));
    lines($("soc-chart"), [
      { name: "SOC kWh", values: r.soc_kwh, color: "#1f77b4" },
      { name: "capacity", values: r.soc_kwh.map(() => cap), color: "#d62728", dash: [6, 4] },
    ], "kWh");
    const text = r.soc_kwh.map((v, i) => `after ${i} slots: ${v.toFixed(3)} kWh`).join("\n");
    show("soc-out", r.error ? text + "\n" + r.error : text, Boolean(r.error));
  } catch (e) {
    show("soc-out", String(e), true);
  }
}

await init();
$("sim-run").addEventListener("click", runSimulation);
for (const id of ["al-forecast", "al-down", "al-up", "al-low", "al-high"]) {
  $(id).addEventListener("input", runAllocation);
}
$("soc-run").addEventListener("click", runSoc);
runAllocation();
runSoc();
