import init, { hash_explorer, BasisDemo, RouteDemo, preset } from "./pkg/hrn_demo.js";

const $ = (id) => document.getElementById(id);
const num = (id) => Number($(id).value);
const GRID = 12;

function table(headers, rows) {
  const head = "<tr>" + headers.map((h) => `<th>${h}</th>`).join("") + "</tr>";
  const body = rows.map((r) => "<tr>" + r.map((c) => `<td>${c}</td>`).join("") + "</tr>").join("");
  return `<table>${head}${body}</table>`;
}

function fail(el, e) {
  el.innerHTML = `<pre>error: ${e}</pre>`;
}

// Hash estimator
function runHash() {
  try {
    const r = JSON.parse(hash_explorer($("h-dims").value, num("h-n"), num("h-trials"), 7));
    $("h-out").innerHTML = table(
      ["s", "mean error", "std error", "error variance", "s * variance", "mean self product"],
      r.rows.map((x) => [
        x.s,
        x.mean_error.toExponential(2),
        x.std_error.toExponential(2),
        x.error_variance.toExponential(3),
        (x.s * x.error_variance).toFixed(3),
        x.self_mean.toFixed(4),
      ]),
    );
  } catch (e) {
    fail($("h-out"), e);
  }
}

// Basis
let basis = null;
function renderBasis(state) {
  const s = JSON.parse(state);
  const cov = s.coverage.map((c, i) => `${"ABC"[i]} <span class="bar" style="width:${(c * 200).toFixed(0)}px"></span> ${c.toFixed(3)}`);
  $("b-out").innerHTML =
    `<p>steps ${s.steps}, cluster ${"ABC"[s.cluster]}, vectors ${s.nonzero}/${s.capacity}, ` +
    `expansions ${s.expanded}, replacements ${s.replaced}, age ${s.age}/${s.max_age}, ` +
    `Gram deviation ${s.gram_deviation.toExponential(2)}</p>` +
    `<p>slot counters: ${s.counters.join(" ")}</p>` +
    `<p>mean projection magnitude per cluster:<br>${cov.join("<br>")}</p>`;
}
function resetBasis() {
  try {
    basis?.free();
    basis = new BasisDemo(num("b-dim"), num("b-cap"), num("b-age"), num("b-rho"), num("b-tau"), 11);
    renderBasis(basis.state());
  } catch (e) {
    basis = null;
    fail($("b-out"), e);
  }
}

// Routing
let net = null;
const pixels = new Float32Array(GRID * GRID);
const cells = [];
function paint() {
  pixels.forEach((v, i) => {
    const g = Math.round(235 - 235 * v);
    cells[i].style.background = `rgb(${g},${g},${g})`;
  });
}
function buildGrid() {
  let down = false;
  for (let i = 0; i < GRID * GRID; i++) {
    const d = document.createElement("div");
    const set = (ev) => {
      pixels[i] = ev.shiftKey ? 0 : 1;
      paint();
    };
    d.addEventListener("mousedown", (ev) => { down = true; set(ev); });
    d.addEventListener("mouseenter", (ev) => { if (down) set(ev); });
    cells.push(d);
    $("grid").appendChild(d);
  }
  window.addEventListener("mouseup", () => { down = false; });
}
function renderRoute(json) {
  const t = JSON.parse(json);
  const s = JSON.parse(net.summary());
  const levels = table(
    ["level", "unit", "projection", "residue", "initialized"],
    t.levels.map((l, k) => [k + 1, l.unit, l.projection_norm.toFixed(3), l.residue_norm.toFixed(3), l.initialized ? "yes" : ""]),
  );
  const units = table(["unit", "basis fill"], s.units.map((u) => [u.id, `${u.basis}/${u.capacity}`]));
  const usage = table(
    ["level", ...s.units.map((u) => `unit ${u.id}`)],
    s.usage.map((row, k) => [k + 1, ...row]),
  );
  $("r-out").innerHTML =
    `<p>end: ${t.end}, output norm ${t.output_norm.toFixed(3)}, network changed: ${t.state_changed}</p>` +
    levels + `<p>train routes so far: ${s.routed}</p>` + units + usage;
}
function route(train) {
  if (!net) return;
  try {
    renderRoute(net.route(pixels, train));
  } catch (e) {
    fail($("r-out"), e);
  }
}
function resetNet() {
  try {
    net?.free();
    net = new RouteDemo(4, num("r-depth"), num("r-tau"), 5);
    $("r-out").innerHTML = "<p>fresh network: all bases empty</p>";
  } catch (e) {
    net = null;
    fail($("r-out"), e);
  }
}
let presetSeed = 1;
function loadPreset() {
  pixels.set(preset(presetSeed % 4, presetSeed));
  presetSeed++;
  paint();
}

await init();
$("status").textContent = "";
$("h-run").onclick = runHash;
$("b-reset").onclick = resetBasis;
$("b-feed").onclick = () => basis && renderBasis(basis.feed(50));
document.querySelectorAll(".b-cl").forEach((b) => {
  b.onclick = () => {
    if (!basis) return;
    basis.set_cluster(Number(b.dataset.c));
    renderBasis(basis.state());
  };
});
buildGrid();
$("r-clear").onclick = () => { pixels.fill(0); paint(); };
$("r-preset").onclick = loadPreset;
$("r-reset").onclick = resetNet;
$("r-train").onclick = () => route(true);
$("r-eval").onclick = () => route(false);
$("r-warm").onclick = () => {
  if (!net) return;
  let last = null;
  for (let i = 0; i < 40; i++) last = net.route(preset(i % 4, 1000 + i), true);
  renderRoute(last);
};
runHash();
resetBasis();
resetNet();
loadPreset();
