// ./pkg is the output of `wasm-bindgen --target web --out-dir crates/web/www/pkg` (see README).
import init, { Demo, alpha_curve } from "./pkg/htam_web.js";

const $ = (id) => document.getElementById(id);

function bars(el, rows, cls = "") {
  el.replaceChildren();
  const max = Math.max(1e-12, ...rows.map((r) => r.value));
  for (const r of rows) {
    const label = document.createElement("div");
    label.textContent = r.label;
    const track = document.createElement("div");
    const bar = document.createElement("div");
    bar.className = `bar ${cls}`;
    bar.style.width = `${(100 * r.value) / max}%`;
    track.append(bar);
    const value = document.createElement("div");
    value.textContent = r.text ?? r.value.toFixed(3);
    el.append(label, track, value);
  }
}

function slider(id, onChange) {
  const input = $(id);
  const show = () => {
    $(`${id}-v`).textContent = input.value;
    onChange();
  };
  input.addEventListener("input", show);
  return show;
}

await init();
const demo = new Demo();
const globals = JSON.parse(demo.globals());
const label = Object.fromEntries(globals);
let prefix = [];

function drawAlpha() {
  const len = Number($("a-len").value);
  const weights = JSON.parse(alpha_curve(len, Number($("a-lambda").value)));
  bars(
    $("alpha"),
    weights.map((w, i) => ({ label: i === len - 1 ? `position ${i + 1} (latest)` : `position ${i + 1}`, value: w })),
    "alpha",
  );
}

function drawDist() {
  $("prefix-view").replaceChildren(
    ...prefix.map((g) => Object.assign(document.createElement("span"), { textContent: label[g] })),
  );
  try {
    const rows = JSON.parse(
      demo.policyDistribution(
        JSON.stringify(prefix),
        Number($("p-eps").value),
        Number($("p-tau").value),
        Number($("p-lambda").value),
        $("p-failed").checked,
      ),
    );
    $("dist-err").textContent = "";
    bars(
      $("dist"),
      rows.map((r) => ({ label: label[r.global], value: r.probability, text: `${(100 * r.probability).toFixed(1)}%` })),
    );
  } catch (e) {
    $("dist-err").textContent = String(e);
  }
}

function drawEdges() {
  const edges = JSON.parse(demo.edges());
  const table = document.createElement("table");
  const head = table.insertRow();
  head.append(Object.assign(document.createElement("th"), { textContent: "from \\ to" }));
  for (const [, l] of globals) head.append(Object.assign(document.createElement("th"), { textContent: l }));
  for (const [src, l] of globals) {
    const row = table.insertRow();
    row.append(Object.assign(document.createElement("th"), { textContent: l }));
    for (const [dst] of globals) {
      const e = edges.find((x) => x.src === src && x.dst === dst);
      row.insertCell().textContent = e.n ? `${e.succ}/${e.n}` : "";
    }
  }
  $("edges").replaceChildren(
    Object.assign(document.createElement("p"), { textContent: "Edge observations (improved / observed):" }),
    table,
  );
}

function runSim() {
  try {
    const out = JSON.parse(
      demo.simulateRun(
        Number($("s-tasks").value),
        Number($("s-steps").value),
        BigInt($("s-seed").value),
        Number($("p-lambda").value),
        $("s-ablation").value,
      ),
    );
    $("sim-err").textContent = "";
    const m = out.metrics;
    const lines = [
      `campaign ${out.campaign}: ${m.tasks} tasks, mean best speedup ${out.mean_best_speedup.toFixed(3)}x, ` +
        `correct ${(100 * m.correctness_rate).toFixed(0)}%, fast@1 ${(100 * m.fast_at_1).toFixed(0)}%, ` +
        `bank observations ${out.observations}`,
      "",
    ];
    for (const t of out.tasks) {
      const path = t.steps.map((s) => `${label[s.global]}${s.speedup ? ` ${s.speedup.toFixed(2)}x` : ` (${s.outcome ?? "-"})`}`);
      lines.push(`${t.task_id}  best ${t.best_speedup.toFixed(3)}x  ${path.join(" -> ")}`);
    }
    $("sim-summary").textContent = lines.join("\n");
  } catch (e) {
    $("sim-err").textContent = String(e);
  }
  drawEdges();
  drawDist();
}

for (const [id, l] of globals) {
  const b = Object.assign(document.createElement("button"), { textContent: l });
  b.addEventListener("click", () => {
    prefix.push(id);
    drawDist();
  });
  $("chips").append(b);
}
$("prefix-clear").addEventListener("click", () => {
  prefix = [];
  drawDist();
});
$("p-failed").addEventListener("change", drawDist);
$("s-run").addEventListener("click", runSim);
$("s-reset").addEventListener("click", () => {
  demo.reset();
  $("sim-summary").textContent = "";
  drawEdges();
  drawDist();
});

slider("a-len", drawAlpha)();
slider("a-lambda", drawAlpha)();
for (const id of ["p-eps", "p-tau", "p-lambda"]) slider(id, drawDist)();
drawEdges();
