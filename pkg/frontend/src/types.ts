// Payload shapes of the control HTTP API. The console renders exactly what
// the server returns and never invents state of its own.

export interface ApiErrorBody {
  error: { code: string; message: string };
}

export interface ChangeRecord {
  change_id: string;
  source_id: string;
  change_type: string;
  payload: Record<string, unknown>;
  detected_at: string;
  origin: "WRAPPER" | "ELT";
  status: "PENDING" | "RESOLVED";
  effective_status: string;
  option_count: number;
  live_options: number;
}

export interface HistoryEntry {
  status: string;
  at: string;
  actor: string;
}

export interface PotentialChange {
  pc_id: string;
  change_id: string | null;
  option_kind: string;
  parameters: Record<string, unknown>;
  status: "PROPOSED" | "CHOSEN" | "APPLIED" | "REJECTED";
  status_history: HistoryEntry[];
}

export interface ParamSpec {
  name: string;
  type: "BOOLEAN" | "INTEGER" | "DECIMAL" | "TEXT" | "TIMESTAMP";
  description: string;
  required: boolean;
}

export interface SchemaDelta {
  dataset_id: string;
  deltas: Record<string, unknown>[];
}

export interface MappingDelta {
  mapping_id: string;
  deltas: Record<string, unknown>[];
}

export interface ImpactReport {
  affected_schemas: SchemaDelta[];
  affected_mappings: MappingDelta[];
  affected_cubes: string[];
  required_parameters: ParamSpec[];
}

export interface DatasetSummary {
  dataset_id: string;
  version: number;
  kind: string;
  refresh_count: number;
  batches?: number;
}

export interface QueryResult {
  rows: Record<string, unknown>[];
  cuboid: string;
}

/** One option card: the proposal plus its preview (or why the preview failed). */
export interface OptionCard {
  option: PotentialChange;
  report: ImpactReport | null;
  previewError: string | null;
}
