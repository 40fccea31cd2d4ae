import { describe, expect, it } from "vitest";

import { missingParameters, parseParamInput } from "../src/gating.js";
import type { ParamSpec } from "../src/types.js";

const DEFAULT: ParamSpec = { name: "default", type: "TEXT", description: "", required: true };
const CONVERSION: ParamSpec = { name: "conversion", type: "TEXT", description: "", required: false };
const CONFIRM: ParamSpec = { name: "confirm", type: "BOOLEAN", description: "", required: true };

describe("missingParameters", () => {
  it("flags absent and empty required values", () => {
    expect(missingParameters([DEFAULT], {})).toEqual(["default"]);
    expect(missingParameters([DEFAULT], { default: "" })).toEqual(["default"]);
    expect(missingParameters([DEFAULT], { default: null })).toEqual(["default"]);
  });

  it("accepts filled values, including falsy ones", () => {
    expect(missingParameters([DEFAULT], { default: "unknown" })).toEqual([]);
    expect(missingParameters([DEFAULT], { default: 0 })).toEqual([]);
    expect(missingParameters([CONFIRM], { confirm: false })).toEqual([]);
  });

  it("ignores optional parameters", () => {
    expect(missingParameters([CONVERSION], {})).toEqual([]);
    expect(missingParameters([DEFAULT, CONVERSION], { default: "x" })).toEqual([]);
  });
});

describe("parseParamInput", () => {
  it("parses numbers per declared type", () => {
    expect(parseParamInput({ ...DEFAULT, type: "INTEGER" }, "42")).toBe(42);
    expect(parseParamInput({ ...DEFAULT, type: "DECIMAL" }, "2.5")).toBe(2.5);
    expect(parseParamInput({ ...DEFAULT, type: "INTEGER" }, "2.5")).toBe("2.5"); // not an integer
  });

  it("parses booleans from the select values", () => {
    expect(parseParamInput(CONFIRM, "true")).toBe(true);
    expect(parseParamInput(CONFIRM, "false")).toBe(false);
    expect(parseParamInput(CONFIRM, "")).toBe("");
  });

  it("keeps text verbatim and empty inputs empty", () => {
    expect(parseParamInput(DEFAULT, "hello")).toBe("hello");
    expect(parseParamInput({ ...DEFAULT, type: "DECIMAL" }, "")).toBe("");
  });
});
