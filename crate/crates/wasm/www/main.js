import init, { forestPlot, dotplot, effectSize } from "./pkg/metaforge_wasm.js";

const studies = [
  { id: "Chen 2019", t: [14.1, 3.2, 24], c: [12.0, 3.4, 25] },
  { id: "Okafor 2020", t: [11.0, 2.5, 30], c: [10.2, 2.4, 31] },
  { id: "Lindqvist 2021", t: [9.0, 4.0, 18], c: [8.1, 3.8, 20] },
  { id: "Moreau 2022", t: [13.0, 3.0, 40], c: [10.0, 3.0, 38] },
];

const arm = ([mean, sd, n]) => ({ mean, sd, n });
const rows = studies.map((s) => ({
  result_id: s.id,
  citation: s.id,
  data: { design: "continuous", treatment: arm(s.t), control: arm(s.c) },
  kind: "SMD_g",
}));

const excluded = new Set();
const $ = (id) => document.getElementById(id);

function fail(el, e) {
  el.innerHTML = `<span class="error">${e.message ?? e}</span>`;
}

function drawForest() {
  try {
    const reply = JSON.parse(forestPlot(JSON.stringify({ rows, params: { excluded: [...excluded] } })));
    $("forest").innerHTML = reply.svg;
    const p = reply.table.pooled;
    $("pooled").textContent = p
      ? `pooled g = ${p.mu.toFixed(3)} [${p.ci95[0].toFixed(3)}, ${p.ci95[1].toFixed(3)}], k = ${p.k}, I² = ${(100 * p.I2).toFixed(1)}%`
      : reply.table.message;
  } catch (e) {
    fail($("forest"), e);
  }
}

function buildToggles() {
  for (const s of studies) {
    const label = document.createElement("label");
    const box = document.createElement("input");
    box.type = "checkbox";
    box.checked = true;
    box.addEventListener("change", () => {
      box.checked ? excluded.delete(s.id) : excluded.add(s.id);
      drawForest();
    });
    label.append(box, ` ${s.id}`);
    $("toggles").append(label);
  }
}

function drawDots() {
  const [mean, se, x0] = ["dot-mean", "dot-se", "dot-x0"].map((id) => Number($(id).value));
  try {
    const { data, below, above } = JSON.parse(dotplot(mean, se, x0));
    const w = 500, h = 120, r = Math.min(w / 50, 8);
    const x = (v) => ((v - data.axis.min) / (data.axis.max - data.axis.min)) * w;
    const circles = data.dots
      .map((d) => `<circle cx="${x(d.bin_center)}" cy="${h - 10 - r - 2 * r * d.stack_index}" r="${r * 0.9}" fill="steelblue"/>`)
      .join("");
    const ref = `<line x1="${x(x0)}" x2="${x(x0)}" y1="0" y2="${h - 10}" stroke="gray" stroke-dasharray="4"/>`;
    $("dots").innerHTML = `<svg width="${w}" height="${h}">${ref}${circles}<line x1="0" x2="${w}" y1="${h - 10}" y2="${h - 10}" stroke="black"/></svg>`;
    $("dot-counts").textContent = `${below} of 20 below ${x0}, ${above} above`;
  } catch (e) {
    fail($("dots"), e);
  }
}

function calculate() {
  const kind = $("es-kind").value;
  const v = (id) => Number($(id).value);
  const data =
    kind === "RD" || kind === "lnOR"
      ? { design: "dichotomous", treatment: { events: v("es-t1"), n: v("es-tn") }, control: { events: v("es-c1"), n: v("es-cn") } }
      : {
          design: "continuous",
          treatment: { mean: v("es-t1"), sd: v("es-t2"), n: v("es-tn") },
          control: { mean: v("es-c1"), sd: v("es-c2"), n: v("es-cn") },
        };
  try {
    const est = JSON.parse(effectSize(JSON.stringify(data), kind));
    $("es-out").textContent = `${est.kind}: y = ${est.y.toFixed(6)}, v = ${est.v.toFixed(6)}` +
      (est.correction_applied ? `\n${est.correction_applied}` : "");
  } catch (e) {
    fail($("es-out"), e);
  }
}

await init();
buildToggles();
drawForest();
drawDots();
calculate();
for (const id of ["dot-mean", "dot-se", "dot-x0"]) $(id).addEventListener("input", drawDots);
for (const id of ["es-kind", "es-t1", "es-t2", "es-tn", "es-c1", "es-c2", "es-cn"]) $(id).addEventListener("input", calculate);
