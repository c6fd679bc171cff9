// In-memory stand-in for the annotation backend, speaking the same wire
// protocol. Agreement numbers follow the backend's integer-exact kappa so
// "verbatim display" assertions are meaningful.

import type { AgreementResponse, Label, SweepResponse } from "../src/types.js";

export interface FakeItem {
  item_id: string;
  kind: "phrase" | "image-pair";
  phrase_text: string;
  cosine: number | null;
  multi_target?: boolean;
}

export interface LogRecord {
  action: "label";
  item_id: string;
  annotator_id: string;
  label: Label;
}

export class FakeBackend {
  readonly labels = new Map<string, Label>();
  readonly log: LogRecord[] = [];
  cannedSweep: SweepResponse = { available: false };
  failing = false;

  constructor(
    readonly items: FakeItem[],
    replayLog?: LogRecord[],
  ) {
    for (const record of replayLog ?? []) {
      this.labels.set(`${record.item_id}|${record.annotator_id}`, record.label);
      this.log.push(record);
    }
  }

  private labelsFor(annotator: string): Map<string, Label> {
    const out = new Map<string, Label>();
    for (const [key, label] of this.labels) {
      const [item, owner] = key.split("|");
      if (owner === annotator) {
        out.set(item, label);
      }
    }
    return out;
  }

  queueNext(annotator: string, after?: string) {
    const labeled = this.labelsFor(annotator);
    const pending = this.items.filter((item) => !labeled.has(item.item_id));
    const progress = { labeled: this.items.length - pending.length, total: this.items.length };
    if (pending.length === 0) {
      return { done: true, progress };
    }
    if (after !== undefined) {
      const positions = new Map(this.items.map((item, index) => [item.item_id, index]));
      const pivot = positions.get(after);
      if (pivot !== undefined) {
        const next = pending.find((item) => (positions.get(item.item_id) ?? -1) > pivot);
        if (next) {
          return { done: false, progress, item: { multi_target: false, ...next } };
        }
      }
    }
    return { done: false, progress, item: { multi_target: false, ...pending[0] } };
  }

  submit(itemId: string, annotator: string, label: Label): { status: number; body: unknown } {
    if (!this.items.some((item) => item.item_id === itemId)) {
      return { status: 404, body: { detail: "unknown item" } };
    }
    const key = `${itemId}|${annotator}`;
    if (this.labels.has(key)) {
      return { status: 409, body: { detail: "already labeled" } };
    }
    this.labels.set(key, label);
    this.log.push({ action: "label", item_id: itemId, annotator_id: annotator, label });
    return { status: 200, body: { ok: true, n_labels: this.labels.size } };
  }

  agreement(): AgreementResponse {
    const annotators = Array.from(new Set(Array.from(this.labels.keys()).map((k) => k.split("|")[1]))).sort();
    if (annotators.length < 2) {
      return { available: false };
    }
    const [a, b] = annotators;
    const labelsA = this.labelsFor(a);
    const labelsB = this.labelsFor(b);
    const shared = Array.from(labelsA.keys()).filter((item) => labelsB.has(item));
    if (shared.length === 0) {
      return { available: false };
    }
    const names = Array.from(
      new Set(shared.flatMap((item) => [labelsA.get(item)!, labelsB.get(item)!])),
    ).sort();
    const confusion: Record<string, Record<string, number>> = {};
    for (const la of names) {
      confusion[la] = {};
      for (const lb of names) {
        confusion[la][lb] = 0;
      }
    }
    for (const item of shared) {
      confusion[labelsA.get(item)!][labelsB.get(item)!] += 1;
    }
    const n = shared.length;
    const trace = names.reduce((sum, l) => sum + confusion[l][l], 0);
    const row = (l: string) => names.reduce((sum, lb) => sum + confusion[l][lb], 0);
    const col = (l: string) => names.reduce((sum, la) => sum + confusion[la][l], 0);
    const s = names.reduce((sum, l) => sum + row(l) * col(l), 0);
    const kappa = n * n - s === 0 ? 1.0 : (n * trace - s) / (n * n - s);
    return {
      available: true,
      n_items: n,
      percent_agreement: trace / n,
      kappa,
      confusion,
    };
  }

  /** fetch-compatible shim routing the five endpoints. */
  fetch = async (input: string, init?: RequestInit): Promise<Response> => {
    if (this.failing) {
      throw new TypeError("fetch failed: backend unreachable");
    }
    const url = new URL(input, "http://fake");
    const json = (body: unknown, status = 200) =>
      new Response(JSON.stringify(body), {
        status,
        headers: { "Content-Type": "application/json" },
      });
    if (url.pathname === "/api/queue/next") {
      return json(this.queueNext(url.searchParams.get("annotator") ?? "", url.searchParams.get("after") ?? undefined));
    }
    if (url.pathname === "/api/labels" && init?.method === "POST") {
      const body = JSON.parse(String(init.body)) as {
        item_id: string;
        annotator_id: string;
        label: Label;
      };
      const result = this.submit(body.item_id, body.annotator_id, body.label);
      return json(result.body, result.status);
    }
    if (url.pathname === "/api/agreement") {
      return json(this.agreement());
    }
    if (url.pathname === "/api/sweep") {
      return json(this.cannedSweep);
    }
    if (url.pathname.startsWith("/api/item/")) {
      const itemId = decodeURIComponent(url.pathname.slice("/api/item/".length));
      const item = this.items.find((candidate) => candidate.item_id === itemId);
      if (!item) {
        return json({ detail: "unknown item" }, 404);
      }
      return json({
        item_id: item.item_id,
        kind: item.kind,
        phrase_id: item.item_id,
        phrase_text: item.phrase_text,
        cosine: item.cosine ?? undefined,
        image_b64: item.kind === "image-pair" ? "aW1hZ2U=" : undefined,
        media_type: item.kind === "image-pair" ? "image/png" : undefined,
      });
    }
    return json({ detail: "not found" }, 404);
  };
}

export function phraseItems(count: number): FakeItem[] {
  return Array.from({ length: count }, (_, index) => ({
    item_id: `ph${index}`,
    kind: "phrase" as const,
    phrase_text: `phrase ${index}`,
    cosine: null,
  }));
}
