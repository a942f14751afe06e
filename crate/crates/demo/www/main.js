import init, { graph, decode_dialogue, attention } from "./pkg/dpgcrf_demo.js";

const $ = (id) => document.getElementById(id);
let lastAttention = null;

function call(fn) {
  try {
    const value = JSON.parse(fn());
    $("error").textContent = "";
    return value;
  } catch (e) {
    $("error").textContent = String(e.message ?? e);
    return null;
  }
}

function renderGraph() {
  const g = call(() => graph($("dialogue").value));
  const root = $("graph");
  root.replaceChildren();
  if (!g) return;
  const onSpine = new Set(g.spine);
  let previous = -1;
  g.utterances.forEach((u, i) => {
    if (i > 0) {
      const link = document.createElement("div");
      // A spine edge joins consecutive spine entries; skipped utterances break the visual run.
      link.className = onSpine.has(i) && previous >= 0 ? "spine" : "gap";
      root.append(link);
    }
    const row = document.createElement("div");
    row.className = "utt";
    const node = document.createElement("div");
    node.className = "node " + u.role;
    node.textContent = u.role === "observed" ? u.label : u.role === "skipped" ? "skip" : "?";
    const text = document.createElement("span");
    text.textContent = `speaker ${u.speaker}: ${u.tokens.join(" ")}`;
    row.append(node, text);
    root.append(row);
    if (onSpine.has(i)) previous = i;
  });
}

function renderDecode() {
  const values = ["expansion", "reply", "prior"].map((id) => {
    const v = parseFloat($(id).value);
    $(id + "-v").textContent = v.toFixed(1);
    return v;
  });
  const d = call(() => decode_dialogue($("dialogue").value, ...values));
  $("decoded").textContent = d ? d.rendered.join("\n") + `\n\nscore ${d.score.toFixed(3)}` : "";
}

function fillSelect(select, n) {
  const keep = Math.min(parseInt(select.value || "0", 10), n - 1);
  select.replaceChildren(
    ...Array.from({ length: n }, (_, i) => new Option(String(i), String(i)))
  );
  select.value = String(Math.max(keep, 0));
}

function renderAttention() {
  const utterance = Math.max(0, parseInt($("utterance").value || "0", 10));
  const seed = BigInt(Math.max(0, parseInt($("seed").value || "0", 10)));
  lastAttention = call(() => attention($("dialogue").value, utterance, seed));
  if (!lastAttention) {
    $("heatmap").replaceChildren();
    return;
  }
  fillSelect($("layer"), lastAttention.heads.length);
  fillSelect($("head"), lastAttention.heads[0].length);
  drawHeatmap();
}

function drawHeatmap() {
  const a = lastAttention;
  if (!a) return;
  const weights = a.heads[+$("layer").value][+$("head").value];
  const table = document.createElement("table");
  table.className = "heat";
  const header = table.insertRow();
  header.append(document.createElement("th"));
  for (const c of a.context) {
    const th = document.createElement("th");
    th.textContent = c;
    header.append(th);
  }
  weights.forEach((row, r) => {
    const tr = table.insertRow();
    const th = document.createElement("th");
    th.textContent = a.targets[r];
    tr.append(th);
    const max = Math.max(...row);
    for (const w of row) {
      const td = tr.insertCell();
      td.textContent = w.toFixed(2);
      td.title = String(w);
      td.style.background = `rgba(200, 40, 40, ${max > 0 ? w / max : 0})`;
    }
  });
  $("heatmap").replaceChildren(table);
}

function refresh() {
  renderGraph();
  renderDecode();
  renderAttention();
}

await init();
$("dialogue").addEventListener("input", refresh);
for (const id of ["expansion", "reply", "prior"]) $(id).addEventListener("input", renderDecode);
for (const id of ["utterance", "seed"]) $(id).addEventListener("input", renderAttention);
for (const id of ["layer", "head"]) $(id).addEventListener("change", drawHeatmap);
refresh();
