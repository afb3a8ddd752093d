/** Application state and its permalink encoding.
 *
 * The whole UI state that matters for sharing (active view, viewport,
 * layer tree, filter) lives in the URL hash, so copying the address bar
 * into a fresh session restores the same screen. Encoding is canonical:
 * decode(encode(s)) === s for any state built from UI interactions.
 */

export interface Viewport {
  lat: number;
  lon: number;
  /** map scale as degrees of longitude per screen pixel */
  degPerPx: number;
}

export interface LayerChoice {
  /** layer reference: "drone", "lab:{variable}", "pred:{model}:{variable}", "raster:{name}" */
  id: string;
  visible: boolean;
  opacity: number;
}

export interface FilterState {
  variable: string | null;
  min: number | null;
  max: number | null;
  site: string | null;
  from: string | null;
  to: string | null;
}

export type ViewName = "map" | "lab" | "drone" | "admin";

export interface AppState {
  view: ViewName;
  viewport: Viewport;
  layers: LayerChoice[];
  baseMap: boolean;
  filter: FilterState;
}

export const EMPTY_FILTER: FilterState = {
  variable: null,
  min: null,
  max: null,
  site: null,
  from: null,
  to: null,
};

/* Lab points live behind per-variable layers whose ids are known only
 * from the catalogue or from a shared permalink, so the out-of-the-box
 * map carries the one layer that needs no lookup. */
export function defaultState(): AppState {
  return {
    view: "map",
    viewport: { lat: 45.0, lon: 9.0, degPerPx: 0.002 },
    layers: [{ id: "drone", visible: true, opacity: 1 }],
    baseMap: true,
    filter: { ...EMPTY_FILTER },
  };
}

/** Canonical number: what survives a String() round trip, 8 significant digits. */
export function canon(n: number): number {
  return Number(n.toPrecision(8));
}

const VIEWS: ViewName[] = ["map", "lab", "drone", "admin"];

export function encodeState(state: AppState): string {
  const params = new URLSearchParams();
  params.set("view", state.view);
  const { lat, lon, degPerPx } = state.viewport;
  params.set("c", `${canon(lat)},${canon(lon)},${canon(degPerPx)}`);
  if (state.layers.length) {
    params.set(
      "l",
      state.layers
        .map((layer) =>
          [
            encodeURIComponent(layer.id),
            layer.visible ? "1" : "0",
            String(canon(layer.opacity)),
          ].join("@"),
        )
        .join("|"),
    );
  }
  params.set("base", state.baseMap ? "1" : "0");
  const f = state.filter;
  if (f.variable != null) params.set("var", f.variable);
  if (f.min != null) params.set("min", String(canon(f.min)));
  if (f.max != null) params.set("max", String(canon(f.max)));
  if (f.site != null) params.set("site", f.site);
  if (f.from != null) params.set("from", f.from);
  if (f.to != null) params.set("to", f.to);
  return "#" + params.toString();
}

function parseNumber(raw: string | undefined): number | null {
  if (raw == null || raw === "") return null;
  const value = Number(raw);
  return Number.isFinite(value) ? value : null;
}

function parseLayers(raw: string | null): LayerChoice[] {
  if (!raw) return [];
  const layers: LayerChoice[] = [];
  for (const part of raw.split("|")) {
    if (!part) continue;
    const [id, visible, opacity] = part.split("@");
    if (!id) continue;
    const alpha = parseNumber(opacity);
    layers.push({
      id: decodeURIComponent(id),
      visible: visible !== "0",
      opacity: alpha == null ? 1 : Math.min(1, Math.max(0, alpha)),
    });
  }
  return layers;
}

export function decodeState(hash: string): AppState {
  const state = defaultState();
  const body = hash.startsWith("#") ? hash.slice(1) : hash;
  if (!body) return state;
  const params = new URLSearchParams(body);

  const view = params.get("view");
  if (view && (VIEWS as string[]).includes(view)) state.view = view as ViewName;

  const center = params.get("c");
  if (center) {
    const [lat, lon, scale] = center.split(",").map((p) => parseNumber(p));
    if (lat != null && Math.abs(lat) <= 90) state.viewport.lat = lat;
    if (lon != null && Math.abs(lon) <= 180) state.viewport.lon = lon;
    if (scale != null && scale > 0) state.viewport.degPerPx = scale;
  }

  const layers = parseLayers(params.get("l"));
  if (layers.length) state.layers = layers;
  if (params.get("base") === "0") state.baseMap = false;

  state.filter = {
    variable: params.get("var"),
    min: parseNumber(params.get("min") ?? undefined),
    max: parseNumber(params.get("max") ?? undefined),
    site: params.get("site"),
    from: params.get("from"),
    to: params.get("to"),
  };
  return state;
}

export function statesEqual(a: AppState, b: AppState): boolean {
  return encodeState(a) === encodeState(b);
}
