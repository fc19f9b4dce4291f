import init, { rankDocuments, calculate, inspectAction } from "./pkg/reflectool_web.js";

const $ = (id) => document.getElementById(id);

function escape(s) {
  return String(s).replace(/[&<>"]/g, (c) => ({ "&": "&amp;", "<": "&lt;", ">": "&gt;", '"': "&quot;" })[c]);
}

function renderRanking() {
  const k1 = Number($("k1").value);
  const b = Number($("b").value);
  $("k1v").textContent = k1.toFixed(1);
  $("bv").textContent = b.toFixed(2);
  const r = JSON.parse(rankDocuments($("docs").value, $("query").value, k1, b, Number($("k").value) || 1));
  const rows = r.results.map((hit, i) => {
    const terms = hit.terms
      .map((t) => `<code>${escape(t.term)}</code> tf ${t.tf}, idf ${t.idf.toFixed(3)}, +${t.contribution.toFixed(3)}`)
      .join("<br>");
    return `<tr><td>${i + 1}</td><td>${hit.score.toFixed(4)}</td><td>${escape(hit.text)}</td><td>${hit.length}</td><td>${terms || "-"}</td></tr>`;
  });
  $("ranking").innerHTML =
    `<p>Query tokens: ${r.query_tokens.map((t) => `<code>${escape(t)}</code>`).join(" ") || "(none)"}; average length ${r.avg_length.toFixed(2)}</p>` +
    `<table><tr><th>#</th><th>score</th><th>task</th><th>len</th><th>matched terms</th></tr>${rows.join("")}</table>`;
}

function renderCalc() {
  const r = JSON.parse(calculate($("expr").value));
  $("calc").innerHTML =
    r.status === "ok" ? `<span class="ok">= ${escape(r.display)}</span>` : `<span class="bad">${escape(r.message)}</span>`;
}

function renderInspect() {
  const r = JSON.parse(inspectAction($("action").value, $("image").checked, $("table").checked, $("files").checked));
  let head;
  if (r.parsed) {
    const params = r.parsed.params.map(([k, v]) => `<code>${escape(k)}</code> = <code>${escape(v)}</code>`).join(", ");
    const cls = r.verdict === "ok" ? "ok" : "bad";
    head = `<p>Canonical: <code>${escape(r.parsed.canonical)}</code><br>Parameters: ${params || "(none)"}<br>Verdict: <span class="${cls}">${escape(r.verdict)}</span></p>`;
  } else {
    head = `<p class="bad">Parse error: ${escape(r.parse_error)}</p>`;
  }
  const rows = r.matrix.map((row) => {
    const cls = row.verdict === "ok" ? "ok" : "bad";
    return `<tr><td><code>${escape(row.tool)}</code></td><td>${row.requires.join(", ") || "-"}</td><td class="${cls}">${escape(row.verdict)}</td></tr>`;
  });
  $("inspect").innerHTML = head + `<table><tr><th>tool</th><th>needs</th><th>verdict for this task</th></tr>${rows.join("")}</table>`;
}

await init();
for (const id of ["docs", "query", "k1", "b", "k"]) $(id).addEventListener("input", renderRanking);
$("expr").addEventListener("input", renderCalc);
for (const id of ["action", "image", "table", "files"]) $(id).addEventListener("input", renderInspect);
renderRanking();
renderCalc();
renderInspect();
