// Built by `wasm-pack build --target web --out-dir www/pkg` from crates/wasm-demo.
import init, { score_rouge, ensemble_variance, embedding_distance } from "./pkg/softcal_wasm.js";

const $ = (id) => document.getElementById(id);
const fmt = (x, d = 4) => (x === null || x === undefined ? "n/a" : Number(x).toFixed(d));

function table(head, rows) {
  const th = head.map((h) => `<th>${h}</th>`).join("");
  const tr = rows.map((r) => `<tr>${r.map((c) => `<td>${c}</td>`).join("")}</tr>`).join("");
  return `<table><tr>${th}</tr>${tr}</table>`;
}

function guarded(out, fn) {
  try {
    out.innerHTML = fn();
  } catch (e) {
    out.innerHTML = `<p class="err">${e}</p>`;
  }
}

function rouge() {
  guarded($("rouge-out"), () => {
    const r = JSON.parse(score_rouge($("ref").value, $("cand").value));
    const rows = ["rouge1", "rouge2", "rougeL"].map((k) => [k, fmt(r[k].precision), fmt(r[k].recall), fmt(r[k].f1)]);
    return table(["", "P", "R", "F1"], rows);
  });
}

function variance() {
  guarded($("var-out"), () => {
    const v = JSON.parse(ensemble_variance($("base").value, $("spec").value));
    return table(
      ["", "mean", "std"],
      [
        ["without", fmt(v.baseline.mean), fmt(v.baseline.std)],
        ["with", fmt(v.spec.mean), fmt(v.spec.std)],
        ["deduction %", fmt(v.mean_deduction_pct, 2), fmt(v.std_deduction_pct, 2)],
      ],
    );
  });
}

function distance() {
  guarded($("dist-out"), () => {
    const d = JSON.parse(embedding_distance($("p").value, $("q").value));
    const rows = Object.entries(d).map(([k, v]) => [k, fmt(v.value, 6), v.grad_q.map((g) => fmt(g, 4)).join(", ")]);
    return table(["distance", "value", "gradient w.r.t. q"], rows);
  });
}

await init();
for (const [ids, fn] of [[["ref", "cand"], rouge], [["base", "spec"], variance], [["p", "q"], distance]]) {
  ids.forEach((id) => $(id).addEventListener("input", fn));
  fn();
}
