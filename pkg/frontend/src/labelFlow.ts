import type { ApiClient } from "./api.js";
import type { AgreementResponse, Label, Progress, QueueItemView } from "./types.js";

// Session state machine: fetch next -> display -> submit -> advance.
// Items are never skipped silently; defer re-queues the current item after
// the rest of the pass. A submit conflict (another tab already labeled the
// item) refetches instead of failing.

export type FlowPhase =
  | { phase: "idle" }
  | { phase: "labeling"; item: QueueItemView; progress: Progress; deferred: boolean }
  | { phase: "done"; progress: Progress; finalAgreement: AgreementResponse }
  | { phase: "error"; message: string };

export class LabelSession {
  state: FlowPhase = { phase: "idle" };
  private deferredIds = new Set<string>();
  private cursor: string | undefined;

  constructor(
    private readonly api: ApiClient,
    readonly annotatorId: string,
  ) {
    if (!annotatorId) {
      throw new Error("annotator id must be set before starting a session");
    }
  }

  async start(): Promise<FlowPhase> {
    return this.advance();
  }

  async advance(): Promise<FlowPhase> {
    let response;
    try {
      response = await this.api.queueNext(this.annotatorId, this.cursor);
    } catch (err) {
      this.state = { phase: "error", message: String(err) };
      return this.state;
    }
    this.cursor = undefined;
    if (response.done || !response.item) {
      const finalAgreement = await this.api.agreement();
      this.state = { phase: "done", progress: response.progress, finalAgreement };
      return this.state;
    }
    this.state = {
      phase: "labeling",
      item: response.item,
      progress: response.progress,
      deferred: this.deferredIds.has(response.item.item_id),
    };
    return this.state;
  }

  async submit(label: Label): Promise<FlowPhase> {
    if (this.state.phase !== "labeling") {
      throw new Error(`cannot submit in phase ${this.state.phase}`);
    }
    const itemId = this.state.item.item_id;
    const result = await this.api.submitLabel(itemId, this.annotatorId, label);
    if (!result.ok && !result.conflict) {
      this.state = { phase: "error", message: result.message };
      return this.state;
    }
    // conflict: the item is already labeled server-side; just move on.
    // Keep walking forward from this position so deferred items return at
    // the end of the pass rather than immediately.
    this.deferredIds.delete(itemId);
    this.cursor = itemId;
    return this.advance();
  }

  async defer(): Promise<FlowPhase> {
    if (this.state.phase !== "labeling") {
      throw new Error(`cannot defer in phase ${this.state.phase}`);
    }
    this.deferredIds.add(this.state.item.item_id);
    this.cursor = this.state.item.item_id;
    return this.advance();
  }
}
