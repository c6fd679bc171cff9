import type { Label } from "./types.js";

export type KeyAction =
  | { type: "label"; label: Label }
  | { type: "defer" }
  | { type: "none" };

const BINDINGS: Record<string, KeyAction> = {
  "1": { type: "label", label: "antisemitic" },
  "2": { type: "label", label: "islamophobic" },
  "3": { type: "label", label: "irrelevant" },
  d: { type: "defer" },
};

export function keyToAction(key: string): KeyAction {
  return BINDINGS[key] ?? { type: "none" };
}
