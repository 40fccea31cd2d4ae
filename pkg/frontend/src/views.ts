// Pure HTML renderers: view = f(server data). No state lives here, which is
// what lets a hard refresh reproduce any screen from the API alone.

import type {
  ChangeRecord,
  DatasetSummary,
  ImpactReport,
  OptionCard,
  PotentialChange,
  QueryResult,
} from "./types.js";

export function esc(text: unknown): string {
  return String(text)
    .replaceAll("&", "&amp;")
    .replaceAll("<", "&lt;")
    .replaceAll(">", "&gt;")
    .replaceAll('"', "&quot;");
}

export function renderErrorBanner(message: string): string {
  return `<div class="banner error" role="alert">
    <span>${esc(message)}</span>
    <button data-action="retry">Retry</button>
  </div>`;
}

// -- inbox -------------------------------------------------------------------

export function changeSummary(change: ChangeRecord): string {
  const p = change.payload as Record<string, unknown>;
  switch (change.change_type) {
    case "ATTRIBUTE_ADDED":
      return `source now sends a new attribute '${p.attribute}' (${p.value_type})`;
    case "ATTRIBUTE_REMOVED":
      return `source stopped sending attribute '${p.attribute}'`;
    case "ATTRIBUTE_TYPE_CHANGED":
      return `attribute '${p.attribute}' changed type ${p.old_type} -> ${p.new_type}`;
    case "RENAME_CANDIDATE":
      return `'${p.from_attribute}' may have been renamed to '${p.to_attribute}'`;
    case "DATASET_ADDED":
      return `first data observed for dataset '${p.dataset}'`;
    case "DATASET_REMOVED":
      return `dataset '${p.dataset}' has stopped producing data`;
    default:
      return change.change_type;
  }
}

export function renderInbox(items: ChangeRecord[]): string {
  if (items.length === 0) {
    return `<div class="empty-state">No source changes to review. The highway is in sync.</div>`;
  }
  const rows = items
    .map(
      (c) => `<tr class="inbox-item" data-change="${esc(c.change_id)}">
      <td><code>${esc(c.change_id)}</code></td>
      <td>${esc(c.change_type)}</td>
      <td>${esc(changeSummary(c))}</td>
      <td>${esc(c.source_id)}</td>
      <td>${esc(c.origin)}</td>
      <td>${esc(c.detected_at)}</td>
      <td><span class="badge badge-${esc(c.effective_status.toLowerCase())}">${esc(c.effective_status)}</span></td>
      <td>${c.option_count}</td>
      <td><button data-action="open-change" data-change="${esc(c.change_id)}">Review</button></td>
    </tr>`,
    )
    .join("\n");
  return `<table class="inbox">
    <thead><tr><th>id</th><th>type</th><th>summary</th><th>source</th><th>origin</th>
    <th>detected</th><th>status</th><th>options</th><th></th></tr></thead>
    <tbody>${rows}</tbody></table>`;
}

// -- option cards -------------------------------------------------------------

export function effectSummary(report: ImpactReport): string[] {
  const lines: string[] = [];
  for (const s of report.affected_schemas) {
    const ops = s.deltas.map((d) => {
      if (d.op === "add_field") return `+${d.field}`;
      if (d.op === "drop_field") return `-${d.field}`;
      if (d.op === "rename_field") return `${d.from} -> ${d.to}`;
      if (d.op === "retype_field") return `${d.field}: ${d.from} -> ${d.to}`;
      if (d.op === "make_nullable") return `${d.field} becomes optional`;
      if (d.op === "retire_dataset") return "dataset retired";
      return String(d.op);
    });
    lines.push(`schema ${s.dataset_id}: ${ops.join(", ")}`);
  }
  for (const m of report.affected_mappings) {
    lines.push(`mapping ${m.mapping_id}: ${m.deltas.map((d) => String(d.op)).join(", ")}`);
  }
  if (report.affected_cubes.length > 0) {
    lines.push(`cubes rebuilt: ${report.affected_cubes.join(", ")}`);
  }
  if (lines.length === 0) {
    lines.push("no structural effect");
  }
  return lines;
}

function renderParamInput(card: OptionCard, spec: ImpactReport["required_parameters"][number]): string {
  const id = `${card.option.pc_id}-${spec.name}`;
  const label = `<label for="${esc(id)}">${esc(spec.name)}${spec.required ? " *" : ""}
    <small>${esc(spec.description)}</small></label>`;
  if (spec.type === "BOOLEAN") {
    return `${label}<select id="${esc(id)}" data-param="${esc(spec.name)}" data-pc="${esc(card.option.pc_id)}">
      <option value="">--</option><option value="true">true</option><option value="false">false</option>
    </select>`;
  }
  return `${label}<input id="${esc(id)}" data-param="${esc(spec.name)}" data-pc="${esc(card.option.pc_id)}"
    type="text" placeholder="${esc(spec.type)}" />`;
}

export function renderOptionCard(card: OptionCard, applyEnabled: boolean): string {
  const pc = card.option;
  let body: string;
  if (card.previewError !== null) {
    body = `<div class="preview-error">preview failed: ${esc(card.previewError)}</div>`;
  } else if (card.report) {
    const effects = effectSummary(card.report)
      .map((line) => `<li>${esc(line)}</li>`)
      .join("");
    const params = card.report.required_parameters.map((spec) => renderParamInput(card, spec)).join("");
    body = `<ul class="effects">${effects}</ul>
      ${params ? `<div class="params">${params}</div>` : ""}`;
  } else {
    body = `<div class="loading">loading preview...</div>`;
  }
  const terminal = pc.status === "APPLIED" || pc.status === "REJECTED";
  return `<section class="option-card" data-pc="${esc(pc.pc_id)}">
    <header><h3>${esc(pc.option_kind)}</h3>
      <span class="badge badge-${esc(pc.status.toLowerCase())}">${esc(pc.status)}</span></header>
    ${body}
    <footer>
      <button data-action="apply" data-pc="${esc(pc.pc_id)}"
        ${applyEnabled && !terminal ? "" : "disabled"}>Apply</button>
      <button data-action="reject" data-pc="${esc(pc.pc_id)}" ${terminal ? "disabled" : ""}>Reject</button>
    </footer>
  </section>`;
}

export function renderOptionComparison(changeId: string, cards: OptionCard[], enabled: Map<string, boolean>): string {
  const rendered = cards.map((c) => renderOptionCard(c, enabled.get(c.option.pc_id) ?? false)).join("\n");
  return `<div class="comparison" data-change="${esc(changeId)}">
    <button data-action="back">&larr; Inbox</button>
    <h2>Options for <code>${esc(changeId)}</code></h2>
    <div class="cards">${rendered}</div>
  </div>`;
}

// -- history -----------------------------------------------------------------

export function renderHistory(entries: PotentialChange[]): string {
  if (entries.length === 0) {
    return `<div class="empty-state">No changes have been applied yet.</div>`;
  }
  const rows = entries
    .map((p) => {
      const last = p.status_history[p.status_history.length - 1];
      return `<tr>
        <td>${esc(last.at)}</td>
        <td><code>${esc(p.pc_id)}</code></td>
        <td>${esc(p.option_kind)}</td>
        <td><code>${esc(p.change_id ?? "manual")}</code></td>
        <td>${esc(last.actor)}</td>
        <td>${esc(JSON.stringify(p.parameters))}</td>
      </tr>`;
    })
    .join("\n");
  return `<table class="history">
    <thead><tr><th>applied at</th><th>option</th><th>kind</th><th>change</th><th>actor</th><th>parameters</th></tr></thead>
    <tbody>${rows}</tbody></table>`;
}

// -- schema browser ---------------------------------------------------------------

export function renderSchemaBrowser(level: number, datasets: DatasetSummary[], levels: number[]): string {
  const tabs = levels
    .map(
      (n) =>
        `<button data-action="browse-level" data-level="${n}" ${n === level ? 'class="active"' : ""}>L${n}</button>`,
    )
    .join("");
  const rows = datasets
    .map(
      (d) => `<tr>
      <td><code>${esc(d.dataset_id)}</code></td><td>v${d.version}</td><td>${esc(d.kind)}</td>
      <td>${d.refresh_count}</td><td>${d.batches ?? ""}</td>
      <td><button data-action="show-records" data-level="${level}" data-dataset="${esc(d.dataset_id)}">records</button></td>
    </tr>`,
    )
    .join("\n");
  const table =
    datasets.length === 0
      ? `<div class="empty-state">No datasets at this level.</div>`
      : `<table><thead><tr><th>dataset</th><th>version</th><th>kind</th><th>refreshes</th><th>batches</th><th></th></tr></thead>
         <tbody>${rows}</tbody></table>`;
  return `<div class="schema-browser"><nav class="level-tabs">${tabs}</nav>${table}</div>`;
}

export function renderRecords(datasetId: string, records: Record<string, unknown>[]): string {
  if (records.length === 0) {
    return `<div class="empty-state">Dataset <code>${esc(datasetId)}</code> has no current records.</div>`;
  }
  const columns = Object.keys(records[0]);
  const head = columns.map((c) => `<th>${esc(c)}</th>`).join("");
  const rows = records
    .slice(0, 200)
    .map((r) => `<tr>${columns.map((c) => `<td>${r[c] === null ? "<i>null</i>" : esc(r[c])}</td>`).join("")}</tr>`)
    .join("\n");
  return `<h3>${esc(datasetId)} (${records.length} records)</h3>
    <table class="records"><thead><tr>${head}</tr></thead><tbody>${rows}</tbody></table>`;
}

// -- cube query form ----------------------------------------------------------------

export function renderQueryResult(result: QueryResult | null): string {
  if (result === null) return "";
  if (result.rows.length === 0) {
    return `<div class="empty-state">Empty result (answered from ${esc(result.cuboid)}).</div>`;
  }
  const columns = Object.keys(result.rows[0]);
  const head = columns.map((c) => `<th>${esc(c)}</th>`).join("");
  const rows = result.rows
    .map((r) => `<tr>${columns.map((c) => `<td>${r[c] === null ? "<i>null</i>" : esc(r[c])}</td>`).join("")}</tr>`)
    .join("\n");
  return `<p class="hint">answered from cuboid <code>${esc(result.cuboid)}</code></p>
    <table class="results"><thead><tr>${head}</tr></thead><tbody>${rows}</tbody></table>`;
}
