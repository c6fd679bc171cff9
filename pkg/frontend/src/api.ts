import type {
  AgreementResponse,
  ItemPayload,
  Label,
  QueueNextResponse,
  SubmitResult,
  SweepResponse,
} from "./types.js";

export class BackendUnreachable extends Error {}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ApiClient {
  constructor(
    private readonly baseUrl: string = "",
    private readonly fetchFn: FetchLike = (input, init) => fetch(input, init),
  ) {}

  private async get<T>(path: string): Promise<T> {
    let response: Response;
    try {
      response = await this.fetchFn(this.baseUrl + path);
    } catch (err) {
      throw new BackendUnreachable(String(err));
    }
    if (!response.ok) {
      throw new BackendUnreachable(`GET ${path} -> ${response.status}`);
    }
    return (await response.json()) as T;
  }

  queueNext(annotator: string, after?: string): Promise<QueueNextResponse> {
    const cursor = after ? `&after=${encodeURIComponent(after)}` : "";
    return this.get(`/api/queue/next?annotator=${encodeURIComponent(annotator)}${cursor}`);
  }

  agreement(): Promise<AgreementResponse> {
    return this.get("/api/agreement");
  }

  sweep(): Promise<SweepResponse> {
    return this.get("/api/sweep");
  }

  item(itemId: string): Promise<ItemPayload> {
    return this.get(`/api/item/${encodeURIComponent(itemId)}`);
  }

  async submitLabel(itemId: string, annotatorId: string, label: Label): Promise<SubmitResult> {
    let response: Response;
    try {
      response = await this.fetchFn(this.baseUrl + "/api/labels", {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify({ item_id: itemId, annotator_id: annotatorId, label }),
      });
    } catch (err) {
      throw new BackendUnreachable(String(err));
    }
    if (response.ok) {
      const body = (await response.json()) as { n_labels: number };
      return { ok: true, nLabels: body.n_labels };
    }
    const detail = await response.text();
    return { ok: false, conflict: response.status === 409, message: detail };
  }
}
