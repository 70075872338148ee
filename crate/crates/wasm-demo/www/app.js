import init, { channel_masks, ranking_metrics, masking_preview } from "./pkg/cdn_wasm_demo.js";

const $ = (id) => document.getElementById(id);

function call(f, ...args) {
  const v = JSON.parse(f(...args));
  if (v.error) throw new Error(v.error);
  return v;
}

function show(target, render) {
  try {
    target.replaceChildren(...render());
  } catch (e) {
    const p = document.createElement("p");
    p.className = "error";
    p.textContent = e.message;
    target.replaceChildren(p);
  }
}

function el(tag, props = {}, children = []) {
  const node = Object.assign(document.createElement(tag), props);
  node.append(...children);
  return node;
}

function renderMasks() {
  const v = call(channel_masks, $("utt").value, $("spk").value, Number($("mask-seed").value) >>> 0);
  const withAtt = $("show-att").checked;
  return v.channels.map((ch) => {
    const rows = ch.mask.map((row, i) =>
      el("tr", {}, row.map((bit, j) => {
        const a = ch.attention[i][j];
        const td = el("td");
        if (withAtt) {
          td.style.background = `rgba(74, 122, 184, ${a})`;
          td.title = a.toFixed(3);
          td.textContent = bit ? "" : "·";
        } else {
          td.style.background = bit ? "#4a7ab8" : "#fff";
        }
        return td;
      })));
    return el("div", {}, [el("strong", { textContent: ch.name }), el("table", { className: "grid" }, rows)]);
  });
}

function renderMetrics() {
  const v = call(ranking_metrics, $("tsv").value, Number($("group").value), $("filter").checked);
  const rows = v.rows.map((r) => el("tr", {}, [el("td", { textContent: r.metric }), el("td", { textContent: r.value.toFixed(4) })]));
  return [el("table", {}, rows)];
}

function renderPreview() {
  const v = call(masking_preview, $("dialogue").value, $("level").value, Number($("ratio").value),
    Number($("span-p").value), Number($("mlm-seed").value) >>> 0);
  const toks = v.tokens.map((t) => {
    const special = t.text.startsWith("[");
    const span = el("span", { className: "tok" + (t.masked ? " masked" : "") + (special ? " sep" : "") });
    span.textContent = t.shown;
    if (t.masked) span.title = `was ${t.text}`;
    return span;
  });
  const summary = el("p", { textContent: `${v.masked} of ${v.maskable} maskable pieces selected` });
  const spans = v.spans.map((s) => el("div", {}, [
    el("code", { textContent: String(s.length).padStart(2, " ") + " " }),
    el("span", { className: "bar", style: `width:${s.empirical * 600}px` }),
    el("br"),
    el("code", { textContent: "   " }),
    el("span", { className: "bar expected", style: `width:${s.expected * 600}px` }),
  ]));
  $("spans").replaceChildren(el("p", { textContent: "blue: 20 000 draws, grey: truncated geometric" }), ...spans);
  return [summary, el("div", {}, toks)];
}

await init();
$("status").textContent = "";
const wire = (ids, target, render) => {
  const run = () => show($(target), render);
  for (const id of ids) $(id).addEventListener("input", run);
  run();
};
wire(["utt", "spk", "mask-seed", "show-att"], "masks", renderMasks);
wire(["tsv", "group", "filter"], "metrics", renderMetrics);
wire(["dialogue", "level", "ratio", "span-p", "mlm-seed"], "preview", renderPreview);
