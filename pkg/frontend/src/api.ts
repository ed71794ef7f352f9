/**
 * HTTP client for the kernel's JSON API.
 *
 * The console writes through exactly one endpoint: POST /items/{id}/execute.
 * Session creation is the only other POST. Everything else is a GET, so the
 * server's event log stays the single source of truth for every change made
 * from here.
 */

export interface ItemRefDoc {
  name: string;
  uuid: string;
}

export interface ItemSummary {
  name: string;
  type: string | null;
  uuid: string;
}

export interface ViewpointDoc {
  "schema-name": string;
  "view-name": string;
  seq: number;
}

export interface ItemStateDoc {
  ref: ItemRefDoc;
  properties: { name: string; value: unknown; mutable: boolean }[];
  collections: unknown[];
  viewpoints: ViewpointDoc[];
  workflow: { def: unknown; states: Record<string, string> };
  "last-event-seq": number;
  enabled: string[];
}

export interface OutcomeRefDoc {
  "schema-name": string;
  "schema-version": number;
  seq: number;
}

export interface EventDoc {
  seq: number;
  timestamp: number;
  transition: string;
  "activity-path": string;
  agent: ItemRefDoc;
  item: ItemRefDoc;
  branch: unknown;
  outcome: unknown;
  "outcome-ref": OutcomeRefDoc | null;
  "predefined-step": { kind: string; args: Record<string, unknown> } | null;
  "viewpoint-updates": ViewpointDoc[];
}

export interface WidgetDoc {
  label: string;
  "input-kind": string;
  path: string;
  required: boolean;
  constraints: { min?: number; max?: number; minItems?: number; maxItems?: number };
  options?: string[];
  children?: WidgetDoc[];
}

export interface FormModelDoc {
  "schema-name": string;
  "schema-version": number;
  widgets: WidgetDoc[];
}

export interface JobDoc {
  item: ItemRefDoc;
  "activity-path": string;
  "allowed-transitions": string[];
  schema: { name: string; version: number } | null;
  form: FormModelDoc | null;
  "expected-seq": number;
}

export interface Violation {
  code: string;
  path: string;
}

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly body: { error?: string; message?: string; violations?: Violation[] },
  ) {
    super(body.message ?? body.error ?? `HTTP ${status}`);
  }

  get violations(): Violation[] {
    return this.body.violations ?? [];
  }
}

export interface ExecuteRequest {
  "activity-path": string;
  transition: string;
  outcome?: unknown;
  branch?: unknown;
  "expected-seq"?: number;
}

export class Api {
  token: string | null = null;

  constructor(readonly base: string) {}

  async login(agentName: string): Promise<ItemRefDoc> {
    const doc = await this.post<{ token: string; agent: ItemRefDoc }>("/sessions", {
      "agent-name": agentName,
    });
    this.token = doc.token;
    return doc.agent;
  }

  items(filters?: { type?: string }): Promise<ItemSummary[]> {
    const query = filters?.type ? `?type=${encodeURIComponent(filters.type)}` : "";
    return this.get(`/items${query}`);
  }

  item(id: string): Promise<ItemStateDoc> {
    return this.get(`/items/${encodeURIComponent(id)}`);
  }

  events(id: string): Promise<EventDoc[]> {
    return this.get(`/items/${encodeURIComponent(id)}/events`);
  }

  jobs(agent: string): Promise<JobDoc[]> {
    return this.get(`/agents/${encodeURIComponent(agent)}/jobs`);
  }

  /** The sole write path of the console. */
  execute(item: string, request: ExecuteRequest): Promise<EventDoc> {
    return this.post(`/items/${encodeURIComponent(item)}/execute`, request);
  }

  private async get<T>(path: string): Promise<T> {
    const response = await fetch(this.base + path);
    return this.parse<T>(response);
  }

  private async post<T>(path: string, body: unknown): Promise<T> {
    const headers: Record<string, string> = { "Content-Type": "application/json" };
    if (this.token) {
      headers["Authorization"] = `Bearer ${this.token}`;
    }
    const response = await fetch(this.base + path, {
      method: "POST",
      headers,
      body: JSON.stringify(body),
    });
    return this.parse<T>(response);
  }

  private async parse<T>(response: Response): Promise<T> {
    const text = await response.text();
    let doc: unknown = null;
    try {
      doc = text ? JSON.parse(text) : null;
    } catch {
      doc = { error: "BadResponse", message: text };
    }
    if (!response.ok) {
      throw new ApiError(response.status, (doc ?? {}) as ApiError["body"]);
    }
    return doc as T;
  }
}
