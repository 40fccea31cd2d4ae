// Browser bootstrap: one container, event delegation, re-render per state.

import { ApiClient } from "./api.js";
import { ConsoleController } from "./controller.js";
import { parseParamInput } from "./gating.js";
import {
  renderErrorBanner,
  renderHistory,
  renderInbox,
  renderOptionComparison,
  renderQueryResult,
  renderRecords,
  renderSchemaBrowser,
} from "./views.js";

const params = new URLSearchParams(window.location.search);
const baseUrl = params.get("api") ?? "http://127.0.0.1:8600";
const controller = new ConsoleController(new ApiClient(baseUrl));

const app = document.getElementById("app")!;

function render(): void {
  const s = controller.state;
  const parts: string[] = [];
  parts.push(`<header class="top">
    <h1>evodw console</h1>
    <nav>
      <button data-action="nav-inbox" ${s.view === "inbox" ? 'class="active"' : ""}>Inbox</button>
      <button data-action="nav-history" ${s.view === "history" ? 'class="active"' : ""}>History</button>
      <button data-action="nav-schemas" ${s.view === "schemas" ? 'class="active"' : ""}>Schemas</button>
      <button data-action="nav-query" ${s.view === "query" ? 'class="active"' : ""}>Cube query</button>
    </nav>
    <span class="api-url">${baseUrl}</span>
  </header>`);
  if (s.error) parts.push(renderErrorBanner(s.error));
  if (s.notice) parts.push(`<div class="banner notice">${s.notice}</div>`);

  if (s.view === "inbox") {
    parts.push(`<div class="filters">
      <button data-action="filter" data-status="PENDING" ${s.statusFilter === "PENDING" ? 'class="active"' : ""}>Pending</button>
      <button data-action="filter" data-status="" ${s.statusFilter === null ? 'class="active"' : ""}>All</button>
      <button data-action="filter" data-status="RESOLVED" ${s.statusFilter === "RESOLVED" ? 'class="active"' : ""}>Resolved</button>
    </div>`);
    parts.push(renderInbox(s.inbox));
  } else if (s.view === "options" && s.currentChange) {
    const enabled = new Map(s.cards.map((c) => [c.option.pc_id, controller.canApply(c.option.pc_id)]));
    parts.push(renderOptionComparison(s.currentChange, s.cards, enabled));
  } else if (s.view === "history") {
    parts.push(renderHistory(s.history));
  } else if (s.view === "schemas") {
    parts.push(renderSchemaBrowser(s.level, s.datasets, s.levels));
    if (s.records) parts.push(renderRecords(s.records.datasetId, s.records.rows));
  } else if (s.view === "query") {
    parts.push(`<form class="query-form" data-action="query-form">
      <label>cube <input name="cube" placeholder="sales_cube" /></label>
      <label>group by <input name="group_by" placeholder="city,category" /></label>
      <label>measures <input name="measures" placeholder="total_units" /></label>
      <button type="submit">Run</button>
    </form>`);
    parts.push(renderQueryResult(s.queryResult));
  }
  app.innerHTML = parts.join("\n");
}

async function dispatch(action: string, el: HTMLElement): Promise<void> {
  controller.state.notice = null;
  if (action === "nav-inbox" || action === "retry") await controller.fetchInbox();
  else if (action === "nav-history") await controller.loadHistory();
  else if (action === "nav-schemas") await controller.browseLevel(controller.state.level);
  else if (action === "nav-query") controller.state.view = "query";
  else if (action === "filter") {
    const status = el.dataset.status || null;
    await controller.fetchInbox(status);
  } else if (action === "open-change") await controller.openChange(el.dataset.change!);
  else if (action === "back") await controller.fetchInbox();
  else if (action === "apply") await controller.submitDecision(el.dataset.pc!, "APPLY");
  else if (action === "reject") await controller.submitDecision(el.dataset.pc!, "REJECT");
  else if (action === "browse-level") await controller.browseLevel(Number(el.dataset.level));
  else if (action === "show-records")
    await controller.showRecords(Number(el.dataset.level), el.dataset.dataset!);
  render();
}

app.addEventListener("click", (event) => {
  const el = (event.target as HTMLElement).closest<HTMLElement>("[data-action]");
  if (el && el.dataset.action && el.tagName !== "FORM") {
    event.preventDefault();
    void dispatch(el.dataset.action, el);
  }
});

// Typed parameter inputs update the gate; only the affected card re-renders
// its button state on the next paint.
app.addEventListener("input", (event) => {
  const el = event.target as HTMLInputElement | HTMLSelectElement;
  if (el.dataset.param && el.dataset.pc) {
    const spec = controller.parameterSpecs(el.dataset.pc).find((s) => s.name === el.dataset.param);
    if (spec) {
      controller.setParameter(el.dataset.pc, spec.name, parseParamInput(spec, el.value));
      const button = app.querySelector<HTMLButtonElement>(
        `button[data-action="apply"][data-pc="${el.dataset.pc}"]`,
      );
      if (button) button.disabled = !controller.canApply(el.dataset.pc);
    }
  }
});

app.addEventListener("submit", (event) => {
  const form = event.target as HTMLFormElement;
  if (form.dataset.action === "query-form") {
    event.preventDefault();
    const data = new FormData(form);
    const split = (v: FormDataEntryValue | null) =>
      String(v ?? "")
        .split(",")
        .map((s) => s.trim())
        .filter(Boolean);
    void controller
      .runQuery(String(data.get("cube") ?? ""), split(data.get("group_by")), split(data.get("measures")))
      .then(render);
  }
});

void controller.fetchInbox().then(render);
