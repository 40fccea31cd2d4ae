import type { ParamSpec } from "./types.js";

/** Names of required parameters that are still missing or empty.
 * The apply button stays disabled (and no request is sent) until this is
 * empty — the server never sees a half-filled form. */
export function missingParameters(specs: ParamSpec[], values: Record<string, unknown>): string[] {
  const missing: string[] = [];
  for (const spec of specs) {
    if (!spec.required) continue;
    const value = values[spec.name];
    if (value === undefined || value === null || value === "") {
      missing.push(spec.name);
    }
  }
  return missing;
}

/** Parse one form input according to its declared parameter type. Empty
 * strings stay empty (treated as missing by the gate). */
export function parseParamInput(spec: ParamSpec, raw: string | boolean): unknown {
  if (spec.type === "BOOLEAN") {
    if (typeof raw === "boolean") return raw;
    return raw === "true" ? true : raw === "false" ? false : raw;
  }
  if (typeof raw !== "string" || raw === "") return raw;
  if (spec.type === "INTEGER") {
    const n = Number(raw);
    return Number.isInteger(n) ? n : raw;
  }
  if (spec.type === "DECIMAL") {
    const n = Number(raw);
    return Number.isNaN(n) ? raw : n;
  }
  return raw;
}
