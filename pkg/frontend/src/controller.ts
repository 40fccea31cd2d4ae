// The console's headless core: talks to the API, holds only transient view
// state (current screen, form values), and re-fetches after every decision.
// The server remains the sole arbiter of state transitions.

import { ApiClient, ApiError, ConnectionError } from "./api.js";
import { missingParameters } from "./gating.js";
import type { ChangeRecord, OptionCard, ParamSpec, PotentialChange, QueryResult } from "./types.js";

export interface ConsoleState {
  view: "inbox" | "options" | "history" | "schemas" | "query";
  statusFilter: string | null;
  inbox: ChangeRecord[];
  currentChange: string | null;
  cards: OptionCard[];
  formValues: Map<string, Record<string, unknown>>; // pc_id -> entered params
  history: PotentialChange[];
  level: number;
  levels: number[];
  datasets: import("./types.js").DatasetSummary[];
  records: { datasetId: string; rows: Record<string, unknown>[] } | null;
  queryResult: QueryResult | null;
  error: string | null;
  notice: string | null;
}

export class ConsoleController {
  state: ConsoleState = {
    view: "inbox",
    statusFilter: "PENDING",
    inbox: [],
    currentChange: null,
    cards: [],
    formValues: new Map(),
    history: [],
    level: 0,
    levels: [0, 1, 2, 3],
    datasets: [],
    records: null,
    queryResult: null,
    error: null,
    notice: null,
  };

  constructor(public api: ApiClient, public actor: string = "developer") {}

  private async guarded<T>(work: () => Promise<T>): Promise<T | undefined> {
    try {
      this.state.error = null;
      return await work();
    } catch (err) {
      if (err instanceof ConnectionError) {
        this.state.error = `Cannot reach the control service. ${err.message}`;
      } else if (err instanceof ApiError) {
        this.state.error = `${err.code}: ${err.message}`;
      } else {
        this.state.error = String(err);
      }
      return undefined;
    }
  }

  /** Load the change inbox, newest detections first. */
  async fetchInbox(statusFilter: string | null = this.state.statusFilter): Promise<void> {
    this.state.statusFilter = statusFilter;
    await this.guarded(async () => {
      const items = await this.api.listChanges(statusFilter ?? undefined);
      items.sort((a, b) => (a.detected_at < b.detected_at ? 1 : a.detected_at > b.detected_at ? -1 : 0));
      this.state.inbox = items;
      this.state.view = "inbox";
    });
  }

  /** Open one change: ensure options exist, then load every card's preview. */
  async openChange(changeId: string): Promise<void> {
    await this.guarded(async () => {
      let options = await this.api.optionsFor(changeId);
      if (options.filter((o) => o.status === "PROPOSED" || o.status === "CHOSEN").length === 0) {
        options = await this.api.propose(changeId);
      }
      const cards: OptionCard[] = [];
      for (const option of options) {
        try {
          cards.push({ option, report: await this.api.preview(option.pc_id), previewError: null });
        } catch (err) {
          const message = err instanceof ApiError ? `${err.code}: ${err.message}` : String(err);
          cards.push({ option, report: null, previewError: message });
        }
      }
      this.state.currentChange = changeId;
      this.state.cards = cards;
      this.state.view = "options";
    });
  }

  card(pcId: string): OptionCard | undefined {
    return this.state.cards.find((c) => c.option.pc_id === pcId);
  }

  setParameter(pcId: string, name: string, value: unknown): void {
    const values = this.state.formValues.get(pcId) ?? {};
    values[name] = value;
    this.state.formValues.set(pcId, values);
  }

  parameterSpecs(pcId: string): ParamSpec[] {
    return this.card(pcId)?.report?.required_parameters ?? [];
  }

  /** Required parameters still unfilled; apply stays disabled while non-empty. */
  missingFor(pcId: string): string[] {
    return missingParameters(this.parameterSpecs(pcId), this.state.formValues.get(pcId) ?? {});
  }

  canApply(pcId: string): boolean {
    const card = this.card(pcId);
    if (!card || card.previewError !== null) return false;
    if (card.option.status === "APPLIED" || card.option.status === "REJECTED") return false;
    return this.missingFor(pcId).length === 0;
  }

  /** Apply or reject one option. Apply is blocked client-side (no request is
   * sent) while required parameters are missing. */
  async submitDecision(pcId: string, action: "APPLY" | "REJECT"): Promise<boolean> {
    const card = this.card(pcId);
    if (!card) return false;
    if (action === "APPLY" && !this.canApply(pcId)) {
      this.state.notice = `Fill the required parameter(s): ${this.missingFor(pcId).join(", ")}`;
      return false;
    }
    const result = await this.guarded(async () => {
      if (action === "APPLY") {
        const parameters = this.state.formValues.get(pcId) ?? {};
        await this.api.apply(card.option.change_id, pcId, parameters, this.actor);
      } else {
        await this.api.reject(pcId, this.actor);
      }
      return true;
    });
    if (result) {
      this.state.notice = `${action === "APPLY" ? "Applied" : "Rejected"} ${card.option.option_kind}`;
      this.state.formValues.delete(pcId);
      // the decision changed server state: every dependent view re-fetches
      await this.fetchInbox();
      await this.loadHistory(false);
      if (this.state.view === "schemas") {
        await this.browseLevel(this.state.level);
      }
      this.state.view = "inbox";
    }
    return result === true;
  }

  async loadHistory(show: boolean = true): Promise<void> {
    await this.guarded(async () => {
      this.state.history = await this.api.history();
      if (show) this.state.view = "history";
    });
  }

  async browseLevel(level: number): Promise<void> {
    await this.guarded(async () => {
      this.state.level = level;
      this.state.datasets = await this.api.levelDatasets(level);
      this.state.records = null;
      this.state.view = "schemas";
    });
  }

  async showRecords(level: number, datasetId: string): Promise<void> {
    await this.guarded(async () => {
      this.state.records = { datasetId, rows: await this.api.datasetRecords(level, datasetId) };
    });
  }

  async runQuery(cubeId: string, groupBy: string[], measures: string[]): Promise<void> {
    await this.guarded(async () => {
      this.state.queryResult = await this.api.query(cubeId, { group_by: groupBy, measures });
      this.state.view = "query";
    });
  }
}
