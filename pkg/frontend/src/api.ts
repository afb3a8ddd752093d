/** Typed client for the server's documented HTTP surface.
 *
 * Every request this module can emit is listed in CLIENT_ROUTES; a test
 * cross-checks that list against the route table the server publishes, so
 * the UI cannot quietly grow a dependency on an undocumented endpoint.
 */

import type {
  BatchReport,
  FeatureCollection,
  FilterParams,
  JobHandle,
  JobInfo,
  LoginResult,
  ModelInfo,
  PredictionRow,
  QueryPage,
  RasterInfo,
  RegisterResult,
  RouteInfo,
  Sample,
  SpecInfo,
  UserInfo,
  Variable,
} from "./types.js";

export type Collection = "lab" | "drone";

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export interface RequestRecord {
  method: string;
  /** path only, no origin or query string */
  path: string;
}

/** Method + path template of every endpoint the client uses. */
export const CLIENT_ROUTES: ReadonlyArray<readonly [string, string]> = [
  ["POST", "/auth/register"],
  ["POST", "/auth/login"],
  ["GET", "/api/spec"],
  ["GET", "/api/lab"],
  ["GET", "/api/drone"],
  ["GET", "/api/lab/{sample_id}"],
  ["GET", "/api/drone/{sample_id}"],
  ["POST", "/api/lab"],
  ["POST", "/api/drone"],
  ["PUT", "/api/lab/{sample_id}"],
  ["PUT", "/api/drone/{sample_id}"],
  ["DELETE", "/api/lab/{sample_id}"],
  ["DELETE", "/api/drone/{sample_id}"],
  ["POST", "/api/lab/batch"],
  ["POST", "/api/drone/batch"],
  ["GET", "/api/export.csv"],
  ["GET", "/api/variables"],
  ["POST", "/admin/variables"],
  ["GET", "/api/rasters"],
  ["POST", "/admin/rasters"],
  ["PATCH", "/admin/rasters/{raster_id}"],
  ["GET", "/api/models"],
  ["POST", "/admin/models"],
  ["POST", "/api/models/{model_id}/run"],
  ["GET", "/api/predictions"],
  ["GET", "/api/jobs/{job_id}"],
  ["GET", "/admin/users"],
  ["POST", "/admin/approve/{username}"],
  ["GET", "/features/{layer}"],
  ["GET", "/tiles/{raster}/{z}/{x}/{y}.png"],
  ["GET", "/map"],
];

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly code: string,
    message: string,
    readonly details: unknown = null,
  ) {
    super(message);
    this.name = "ApiError";
  }
}

function query(params: FilterParams | Record<string, unknown>): string {
  const search = new URLSearchParams();
  for (const [key, value] of Object.entries(params)) {
    if (value == null || value === "") continue;
    if (typeof value === "boolean") {
      if (value) search.set(key, "1");
    } else {
      search.set(key, String(value));
    }
  }
  const text = search.toString();
  return text ? `?${text}` : "";
}

interface SendOptions {
  json?: unknown;
  body?: BodyInit;
  contentType?: string;
}

export class Api {
  token: string | null = null;
  /** observer for tests that audit which endpoints get hit */
  onRequest: ((record: RequestRecord) => void) | null = null;

  constructor(
    readonly base: string = "",
    private readonly fetchFn: FetchLike = (...args) => fetch(...args),
  ) {}

  url(pathAndQuery: string): string {
    return this.base + pathAndQuery;
  }

  private async send(
    method: string,
    pathAndQuery: string,
    options: SendOptions = {},
  ): Promise<Response> {
    this.onRequest?.({ method, path: pathAndQuery.split("?")[0] ?? pathAndQuery });
    const headers: Record<string, string> = {};
    if (this.token) headers["Authorization"] = `Bearer ${this.token}`;
    let body = options.body;
    if (options.json !== undefined) {
      headers["Content-Type"] = "application/json";
      body = JSON.stringify(options.json);
    } else if (options.contentType) {
      headers["Content-Type"] = options.contentType;
    }
    const response = await this.fetchFn(this.url(pathAndQuery), {
      method,
      headers,
      body,
    });
    if (!response.ok) {
      let code = "http_error";
      let message = `${response.status} on ${method} ${pathAndQuery}`;
      let details: unknown = null;
      try {
        const envelope = await response.json();
        if (envelope && typeof envelope.code === "string") {
          code = envelope.code;
          message = envelope.message ?? message;
          details = envelope.details ?? null;
        }
      } catch {
        // not a JSON envelope; keep the generic message
      }
      throw new ApiError(response.status, code, message, details);
    }
    return response;
  }

  private async json<T>(
    method: string,
    pathAndQuery: string,
    options: SendOptions = {},
  ): Promise<T> {
    const response = await this.send(method, pathAndQuery, options);
    return (await response.json()) as T;
  }

  // ------------------------------------------------------------------ auth

  async register(username: string, password: string): Promise<RegisterResult> {
    return this.json("POST", "/auth/register", { json: { username, password } });
  }

  async login(username: string, password: string): Promise<LoginResult> {
    const result = await this.json<LoginResult>("POST", "/auth/login", {
      json: { username, password },
    });
    this.token = result.token;
    return result;
  }

  async listUsers(pendingOnly = false): Promise<UserInfo[]> {
    const body = await this.json<{ users: UserInfo[] }>(
      "GET",
      `/admin/users${query({ pending: pendingOnly })}`,
    );
    return body.users;
  }

  async approveUser(username: string): Promise<{ username: string; approved: boolean }> {
    return this.json("POST", `/admin/approve/${encodeURIComponent(username)}`);
  }

  // --------------------------------------------------------------- samples

  async querySamples(collection: Collection, params: FilterParams = {}): Promise<QueryPage> {
    return this.json("GET", `/api/${collection}${query(params)}`);
  }

  async getSample(collection: Collection, id: string): Promise<Sample> {
    return this.json("GET", `/api/${collection}/${encodeURIComponent(id)}`);
  }

  async addSample(
    collection: Collection,
    record: Record<string, unknown>,
  ): Promise<{ id: string }> {
    return this.json("POST", `/api/${collection}`, { json: record });
  }

  async replaceSample(
    collection: Collection,
    id: string,
    record: Record<string, unknown>,
  ): Promise<{ id: string }> {
    return this.json("PUT", `/api/${collection}/${encodeURIComponent(id)}`, {
      json: record,
    });
  }

  async deleteSample(collection: Collection, id: string): Promise<void> {
    await this.send("DELETE", `/api/${collection}/${encodeURIComponent(id)}`);
  }

  async uploadBatch(
    collection: Collection,
    csvText: string,
    atomic = false,
  ): Promise<BatchReport> {
    return this.json("POST", `/api/${collection}/batch${query({ atomic })}`, {
      body: csvText,
      contentType: "text/csv",
    });
  }

  async exportCsv(collection: Collection, params: FilterParams = {}): Promise<string> {
    const response = await this.send(
      "GET",
      `/api/export.csv${query({ collection, ...params })}`,
    );
    return response.text();
  }

  // ------------------------------------------------------------- catalogue

  async listVariables(): Promise<Variable[]> {
    const body = await this.json<{ variables: Variable[] }>("GET", "/api/variables");
    return body.variables;
  }

  async createVariable(name: string, unit = "", description = ""): Promise<Variable> {
    return this.json("POST", "/admin/variables", { json: { name, unit, description } });
  }

  async listRasters(): Promise<RasterInfo[]> {
    const body = await this.json<{ rasters: RasterInfo[] }>("GET", "/api/rasters");
    return body.rasters;
  }

  async uploadRaster(
    name: string,
    data: ArrayBuffer | Uint8Array | string,
    filename = "",
  ): Promise<JobHandle> {
    return this.json("POST", `/admin/rasters${query({ name, filename })}`, {
      body: data as BodyInit,
      contentType: "application/octet-stream",
    });
  }

  async setRasterEnabled(rasterId: string, enabled: boolean): Promise<RasterInfo> {
    return this.json("PATCH", `/admin/rasters/${encodeURIComponent(rasterId)}`, {
      json: { enabled },
    });
  }

  // ------------------------------------------------------------ predictors

  async listModels(): Promise<ModelInfo[]> {
    const body = await this.json<{ models: ModelInfo[] }>("GET", "/api/models");
    return body.models;
  }

  async createModel(manifest: Record<string, unknown>): Promise<{ model_id: string }> {
    return this.json("POST", "/admin/models", { json: manifest });
  }

  async runModel(
    modelId: string,
    target: { sample_ids?: string[]; site?: string } = {},
  ): Promise<JobHandle> {
    return this.json("POST", `/api/models/${encodeURIComponent(modelId)}/run`, {
      json: target,
    });
  }

  async listPredictions(
    params: { sample?: string; model?: string; var?: string } = {},
  ): Promise<PredictionRow[]> {
    const body = await this.json<{ predictions: PredictionRow[] }>(
      "GET",
      `/api/predictions${query(params)}`,
    );
    return body.predictions;
  }

  // ------------------------------------------------------------------ jobs

  async getJob(jobId: string): Promise<JobInfo> {
    return this.json("GET", `/api/jobs/${encodeURIComponent(jobId)}`);
  }

  /** Poll a job until it settles; resolves with the final record. */
  async waitForJob(
    jobId: string,
    options: {
      timeoutMs?: number;
      pollMs?: number;
      onUpdate?: (job: JobInfo) => void;
      sleep?: (ms: number) => Promise<void>;
    } = {},
  ): Promise<JobInfo> {
    const timeoutMs = options.timeoutMs ?? 60_000;
    const pollMs = options.pollMs ?? 250;
    const sleep =
      options.sleep ?? ((ms: number) => new Promise((r) => setTimeout(r, ms)));
    const deadline = Date.now() + timeoutMs;
    for (;;) {
      const job = await this.getJob(jobId);
      options.onUpdate?.(job);
      if (job.status === "done" || job.status === "failed") return job;
      if (Date.now() > deadline) {
        throw new ApiError(0, "job_timeout", `job ${jobId} still ${job.status}`);
      }
      await sleep(pollMs);
    }
  }

  // ------------------------------------------------------------------- map

  async features(layer: string, params: FilterParams = {}): Promise<FeatureCollection> {
    return this.json("GET", `/features/${encodeURIComponent(layer)}${query(params)}`);
  }

  async spec(): Promise<SpecInfo> {
    return this.json("GET", "/api/spec");
  }

  /** URL builders for <img> sources; the browser performs these GETs. */
  tileUrl(raster: string, z: number, x: number, y: number): string {
    return this.url(`/tiles/${encodeURIComponent(raster)}/${z}/${x}/${y}.png`);
  }

  mapUrl(bbox: string, width: number, height: number, layers: string[] = []): string {
    return this.url(
      `/map${query({ bbox, width, height, layers: layers.join(",") })}`,
    );
  }
}

/** Matches a concrete request path against a route template. */
export function pathMatchesTemplate(path: string, template: string): boolean {
  const pattern = template
    .split(/(\{[^}]+\})/)
    .map((part) =>
      part.startsWith("{") ? "[^/]+" : part.replace(/[.*+?^${}()|[\]\\]/g, "\\$&"),
    )
    .join("");
  return new RegExp(`^${pattern}$`).test(path);
}

export function routeFor(
  record: RequestRecord,
  routes: ReadonlyArray<Pick<RouteInfo, "method" | "path">>,
): Pick<RouteInfo, "method" | "path"> | null {
  for (const route of routes) {
    if (route.method === record.method && pathMatchesTemplate(record.path, route.path)) {
      return route;
    }
  }
  return null;
}

/** Claims carried by a bearer token, decoded without verification (display only). */
export function decodeTokenClaims(
  token: string,
): { username?: string; role?: string; exp?: number } | null {
  const part = token.split(".")[1];
  if (!part) return null;
  try {
    const b64 = part.replace(/-/g, "+").replace(/_/g, "/");
    const padded = b64 + "=".repeat((4 - (b64.length % 4)) % 4);
    return JSON.parse(atob(padded));
  } catch {
    return null;
  }
}
