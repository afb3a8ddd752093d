/** Payload shapes of the server's documented HTTP surface. */

export interface LoginResult {
  token: string;
  username: string;
  role: string;
}

export interface RegisterResult {
  username: string;
  approved: boolean;
}

export interface UserInfo {
  id: string;
  username: string;
  role: string;
  approved: boolean;
}

export interface Spectrum {
  wavelengths: number[];
  values: number[];
}

/** One sample as served by the collection and detail endpoints. */
export interface Sample {
  id: string;
  collection: "lab" | "drone";
  lat: number;
  lon: number;
  sites: string[];
  spectrum: Spectrum;
  measurements?: Record<string, number>;
  acquired_at?: string;
}

export interface QueryPage {
  total: number;
  offset: number;
  limit: number;
  items: Sample[];
}

export interface Variable {
  id: string;
  name: string;
  unit: string;
  description: string;
}

export interface RasterInfo {
  id: string;
  name: string;
  width: number;
  height: number;
  bands: number;
  status: string;
  enabled: boolean;
  /** min_lon, min_lat, max_lon, max_lat */
  bounds: [number, number, number, number];
  pixel_size: [number, number];
  vmin: number | null;
  vmax: number | null;
}

export interface ModelInfo {
  id: string;
  name: string;
  kind: string;
  hyperparameters: Record<string, unknown>;
  trained_variables: string[];
}

export interface JobInfo {
  id: string;
  kind: string;
  status: "queued" | "running" | "done" | "failed";
  error: string | null;
  result: Record<string, unknown> | null;
}

export interface JobHandle {
  job_id: string;
  job_url: string;
  [key: string]: unknown;
}

export interface RowError {
  row_number: number;
  code: string;
  message: string;
}

export interface BatchReport {
  accepted: number;
  rejected: number;
  row_errors: RowError[];
}

export interface PredictionRow {
  drone_sample_id: string;
  model_id: string;
  variable_id: string;
  value: number;
  created_at: string;
}

export interface PointFeature {
  type: "Feature";
  geometry: { type: "Point"; coordinates: [number, number] };
  properties: Record<string, unknown> & { id: string };
}

export interface FeatureCollection {
  type: "FeatureCollection";
  features: PointFeature[];
}

export interface RouteInfo {
  method: string;
  path: string;
  min_role: string;
  summary: string;
}

export interface SpecInfo {
  service: string;
  version: string;
  routes: RouteInfo[];
  query_parameters: Record<string, string>;
  roles: string[];
}

/** Query parameters understood by the sample, feature and export endpoints. */
export interface FilterParams {
  var?: string;
  min?: number;
  max?: number;
  site?: string;
  from?: string;
  to?: string;
  bbox?: string;
  prefix?: string;
  sort?: string;
  desc?: boolean;
  offset?: number;
  limit?: number;
}

/** Bootstrap document served at /ui/config. */
export interface UiConfig {
  /** API origin; empty string means same origin as the page. */
  apiBase: string;
  /** XYZ template for base imagery, e.g. https://tile.example/{z}/{x}/{y}.png; null = graticule. */
  baseMapUrl: string | null;
}

export const DEFAULT_CONFIG: UiConfig = { apiBase: "", baseMapUrl: null };
