import type { InferenceRequest, InferenceResponse } from "./types";

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ServiceError extends Error {
  constructor(
    message: string,
    public readonly kind: "network" | "http",
    public readonly status?: number,
  ) {
    super(message);
  }
}

export class ServiceClient {
  constructor(
    private readonly baseUrl: string = "",
    private readonly fetchFn: FetchLike = (...args) => fetch(...args),
  ) {}

  private async request(path: string, init?: RequestInit): Promise<unknown> {
    let res: Response;
    try {
      res = await this.fetchFn(this.baseUrl + path, init);
    } catch {
      throw new ServiceError("service unreachable", "network");
    }
    if (!res.ok) {
      let detail = `${res.status}`;
      try {
        const body = (await res.json()) as { detail?: string };
        if (body.detail) detail = body.detail;
      } catch {
        // non-JSON error body; keep the status code
      }
      throw new ServiceError(detail, "http", res.status);
    }
    return res.json();
  }

  async classes(): Promise<string[]> {
    const body = (await this.request("/classes")) as { classes: string[] };
    return body.classes;
  }

  async infer(req: InferenceRequest): Promise<InferenceResponse> {
    return (await this.request("/infer", {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(req),
    })) as InferenceResponse;
  }
}
