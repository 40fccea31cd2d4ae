import { describe, expect, it } from "vitest";

import {
  changeSummary,
  effectSummary,
  renderErrorBanner,
  renderHistory,
  renderInbox,
  renderOptionCard,
  renderRecords,
} from "../src/views.js";
import type { ChangeRecord, ImpactReport, OptionCard, PotentialChange } from "../src/types.js";

function change(over: Partial<ChangeRecord> = {}): ChangeRecord {
  return {
    change_id: "chg-000002",
    source_id: "pos",
    change_type: "ATTRIBUTE_ADDED",
    payload: { attribute: "promo", value_type: "TEXT" },
    detected_at: "2020-01-01T00:00:09Z",
    origin: "WRAPPER",
    status: "PENDING",
    effective_status: "PENDING",
    option_count: 0,
    live_options: 0,
    ...over,
  };
}

function card(over: Partial<OptionCard["option"]> = {}, report: ImpactReport | null = null): OptionCard {
  return {
    option: {
      pc_id: "pc-000001",
      change_id: "chg-000002",
      option_kind: "PROPAGATE_ADD",
      parameters: {},
      status: "PROPOSED",
      status_history: [{ status: "PROPOSED", at: "2020-01-01T00:00:10Z", actor: "system" }],
      ...over,
    },
    report: report ?? {
      affected_schemas: [],
      affected_mappings: [],
      affected_cubes: [],
      required_parameters: [],
    },
    previewError: null,
  };
}

describe("inbox", () => {
  it("renders the empty state", () => {
    expect(renderInbox([])).toContain("empty-state");
  });

  it("renders a pending item with its badge and fields from the server", () => {
    const html = renderInbox([change()]);
    expect(html).toContain("chg-000002");
    expect(html).toContain("badge-pending");
    expect(html).toContain("ATTRIBUTE_ADDED");
    expect(html).toContain("2020-01-01T00:00:09Z");
    expect(html).toContain("pos");
  });

  it("summarizes each change type in plain words", () => {
    expect(changeSummary(change())).toContain("promo");
    expect(
      changeSummary(change({ change_type: "RENAME_CANDIDATE", payload: { from_attribute: "a", to_attribute: "b" } })),
    ).toContain("renamed");
    expect(
      changeSummary(change({ change_type: "DATASET_REMOVED", payload: { dataset: "d" } })),
    ).toContain("stopped");
  });

  it("escapes markup coming from the server", () => {
    const html = renderInbox([change({ source_id: "<script>alert(1)</script>" })]);
    expect(html).not.toContain("<script>alert(1)</script>");
    expect(html).toContain("&lt;script&gt;");
  });
});

describe("option cards", () => {
  it("summarizes impact deltas", () => {
    const lines = effectSummary({
      affected_schemas: [
        { dataset_id: "sales_raw", deltas: [{ op: "add_field", field: "promo", value_type: "TEXT" }] },
      ],
      affected_mappings: [{ mapping_id: "m_clean", deltas: [{ op: "extend_project", field: "promo" }] }],
      affected_cubes: ["sales_cube"],
      required_parameters: [],
    });
    expect(lines[0]).toBe("schema sales_raw: +promo");
    expect(lines[1]).toBe("mapping m_clean: extend_project");
    expect(lines[2]).toContain("sales_cube");
  });

  it("shows 'no structural effect' for an empty report", () => {
    expect(effectSummary({ affected_schemas: [], affected_mappings: [], affected_cubes: [], required_parameters: [] }))
      .toEqual(["no structural effect"]);
  });

  it("disables apply until the gate opens", () => {
    expect(renderOptionCard(card(), false)).toMatch(/data-action="apply"[^>]*disabled/s);
    expect(renderOptionCard(card(), true)).not.toContain("disabled");
  });

  it("renders typed inputs for required parameters", () => {
    const c = card({ option_kind: "MAP_WITH_DEFAULT" }, {
      affected_schemas: [],
      affected_mappings: [],
      affected_cubes: [],
      required_parameters: [{ name: "default", type: "TEXT", description: "substitute value", required: true }],
    });
    const html = renderOptionCard(c, false);
    expect(html).toContain('data-param="default"');
    expect(html).toContain("substitute value");
  });

  it("shows a per-card preview failure", () => {
    const c: OptionCard = { ...card(), report: null, previewError: "APPLY_FAILED: nope" };
    const html = renderOptionCard(c, false);
    expect(html).toContain("preview failed");
    expect(html).toContain("APPLY_FAILED: nope");
  });

  it("disables both buttons on terminal options", () => {
    const html = renderOptionCard(card({ status: "REJECTED" }), true);
    expect(html.match(/disabled/g)?.length).toBe(2);
  });
});

describe("history and records", () => {
  it("renders applied entries with actor and timestamp", () => {
    const entry: PotentialChange = {
      pc_id: "pc-000001",
      change_id: "chg-000002",
      option_kind: "PROPAGATE_ADD",
      parameters: {},
      status: "APPLIED",
      status_history: [
        { status: "PROPOSED", at: "t1", actor: "system" },
        { status: "CHOSEN", at: "t2", actor: "ada" },
        { status: "APPLIED", at: "t3", actor: "ada" },
      ],
    };
    const html = renderHistory([entry]);
    expect(html).toContain("t3");
    expect(html).toContain("ada");
    expect(renderHistory([])).toContain("empty-state");
  });

  it("renders nulls distinctly in record tables", () => {
    const html = renderRecords("sales_clean", [{ day: "2024-01-01", promo: null }]);
    expect(html).toContain("<i>null</i>");
  });
});

describe("error banner", () => {
  it("is retryable", () => {
    const html = renderErrorBanner("cannot reach http://x");
    expect(html).toContain('data-action="retry"');
    expect(html).toContain("cannot reach");
  });
});
