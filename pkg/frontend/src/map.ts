/** Slippy map: feature layers from /features, raster imagery from /tiles
 * (or /map when raster metadata is not readable), layer tree, filter
 * panel, click popups and permalink-backed viewport state.
 *
 * The screen is an equirectangular frame: x grows with longitude, y with
 * falling latitude, degPerPx sets the scale. Mercator base tiles are
 * placed by their geographic corner points, which keeps seams aligned.
 */

import { Api, ApiError } from "./api.js";
import { clear, el, propList, svgEl } from "./dom.js";
import { sparkline } from "./sparkline.js";
import type { AppState, LayerChoice } from "./state.js";
import type {
  FilterParams,
  PointFeature,
  RasterInfo,
  Sample,
  UiConfig,
} from "./types.js";

const TILE = 256;
const FEATURE_COLORS: Record<string, string> = {
  lab: "#1a7f37",
  drone: "#0b63ce",
};
const PRED_COLOR = "#b34700";

interface ScreenBox {
  width: number;
  height: number;
  west: number;
  north: number;
  east: number;
  south: number;
}

function levelCount(height: number, width: number): number {
  let n = 1;
  let h = height;
  let w = width;
  while (Math.max(h, w) > TILE) {
    h = Math.ceil(h / 2);
    w = Math.ceil(w / 2);
    n += 1;
  }
  return n;
}

function isRasterLayer(layer: LayerChoice): boolean {
  return layer.id.startsWith("raster:");
}

function isFeatureLayer(layer: LayerChoice): boolean {
  return layer.id === "drone" || layer.id.startsWith("lab:")
    || layer.id.startsWith("pred:");
}

function featureColor(layerId: string): string {
  if (layerId.startsWith("pred:")) return PRED_COLOR;
  return FEATURE_COLORS[layerId.split(":")[0] ?? ""] ?? "#444";
}

export class MapView {
  private canvas!: HTMLElement;
  private panel!: HTMLElement;
  private banner!: HTMLElement;
  private popup: HTMLElement | null = null;
  private rasterMeta = new Map<string, RasterInfo>();
  private labels = new Map<string, string>();
  /** features as last rendered, per layer id; read by tests */
  readonly rendered = new Map<string, PointFeature[]>();

  constructor(
    private readonly api: Api,
    private readonly root: HTMLElement,
    private state: AppState,
    private readonly onState: (state: AppState) => void,
    private readonly config: UiConfig,
  ) {}

  // ------------------------------------------------------------- geometry

  private box(): ScreenBox {
    const width = this.canvas.clientWidth || 800;
    const height = this.canvas.clientHeight || 520;
    const { lat, lon, degPerPx } = this.state.viewport;
    return {
      width,
      height,
      west: lon - (width / 2) * degPerPx,
      east: lon + (width / 2) * degPerPx,
      north: lat + (height / 2) * degPerPx,
      south: lat - (height / 2) * degPerPx,
    };
  }

  private toScreen(box: ScreenBox, lon: number, lat: number): [number, number] {
    const scale = this.state.viewport.degPerPx;
    return [(lon - box.west) / scale, (box.north - lat) / scale];
  }

  bboxString(): string {
    const box = this.box();
    return [box.west, box.south, box.east, box.north]
      .map((v) => v.toFixed(6))
      .join(",");
  }

  // -------------------------------------------------------------- chrome

  async render(): Promise<void> {
    clear(this.root);
    this.panel = el("aside", { class: "map-panel" });
    this.banner = el("div", { class: "banner", hidden: true });
    this.canvas = el("div", {
      class: "map-canvas",
      onmousedown: (ev) => this.startPan(ev as MouseEvent),
      onwheel: (ev) => this.onWheel(ev as WheelEvent),
    });
    const zoom = el(
      "div",
      { class: "zoom-buttons" },
      el("button", { class: "zoom-in", onclick: () => this.zoomBy(0.5) }, "+"),
      el("button", { class: "zoom-out", onclick: () => this.zoomBy(2) }, "−"),
    );
    const wrap = el("div", { class: "map-wrap" }, this.panel,
      el("div", { class: "map-stage" }, this.banner, this.canvas, zoom));
    this.root.append(wrap);
    await this.discoverLayers();
    this.renderPanel();
    await this.refresh();
  }

  /** Catalogue lookups only a signed-in session can make. Lab points sit
   * behind per-variable layers, so the variable listing is what unlocks
   * them; permalinks can carry the same layer ids to anonymous viewers. */
  private async discoverLayers(): Promise<void> {
    this.rasterMeta.clear();
    this.labels.clear();
    if (!this.api.token) return;
    try {
      const variables = await this.api.listVariables();
      const variableNames = new Map(variables.map((v) => [v.id, v.name]));
      variables.forEach((variable, index) => {
        const id = `lab:${variable.id}`;
        this.labels.set(id, `lab: ${variable.name}`);
        this.ensureLayer(id, index === 0);
      });
      for (const meta of await this.api.listRasters()) {
        this.rasterMeta.set(meta.name, meta);
        this.labels.set(`raster:${meta.name}`, `raster: ${meta.name}`);
        this.ensureLayer(`raster:${meta.name}`, meta.enabled && meta.status === "ready");
      }
      for (const model of await this.api.listModels()) {
        for (const variableId of model.trained_variables) {
          const id = `pred:${model.id}:${variableId}`;
          const variableName = variableNames.get(variableId) ?? variableId;
          this.labels.set(id, `predicted ${variableName} (${model.name})`);
          this.ensureLayer(id, false);
        }
      }
    } catch (error) {
      if (!(error instanceof ApiError)) throw error;
      this.showBanner(`catalogue unavailable: ${error.message}`);
    }
  }

  private ensureLayer(id: string, visible: boolean): void {
    if (!this.state.layers.some((layer) => layer.id === id)) {
      this.state.layers.push({ id, visible, opacity: 1 });
    }
  }

  private labelFor(id: string): string {
    return this.labels.get(id) ?? id;
  }

  private renderPanel(): void {
    clear(this.panel);
    const tree = el("div", { class: "layer-tree" }, el("h3", {}, "Layers"));
    for (const layer of this.state.layers) {
      tree.append(this.layerRow(layer));
    }
    const base = el("label", { class: "layer-row" },
      el("input", {
        type: "checkbox",
        checked: this.state.baseMap,
        onchange: (ev) => {
          this.state.baseMap = (ev.target as HTMLInputElement).checked;
          void this.pushAndRefresh();
        },
      }),
      el("span", {}, "base map"),
    );
    tree.append(base);
    this.panel.append(tree, this.filterPanel());
  }

  private layerRow(layer: LayerChoice): HTMLElement {
    const toggle = el("input", {
      type: "checkbox",
      checked: layer.visible,
      "data-layer": layer.id,
      onchange: (ev) => {
        layer.visible = (ev.target as HTMLInputElement).checked;
        void this.pushAndRefresh();
      },
    });
    const opacity = el("input", {
      type: "range",
      min: 0,
      max: 100,
      value: Math.round(layer.opacity * 100),
      title: "opacity",
      onchange: (ev) => {
        layer.opacity = Number((ev.target as HTMLInputElement).value) / 100;
        void this.pushAndRefresh();
      },
    });
    return el("label", { class: "layer-row" }, toggle,
      el("span", {}, this.labelFor(layer.id)), opacity);
  }

  private filterPanel(): HTMLElement {
    const f = this.state.filter;
    const variable = el("input", { type: "text", value: f.variable ?? "", placeholder: "variable" });
    const min = el("input", { type: "number", value: f.min ?? "", placeholder: "min" });
    const max = el("input", { type: "number", value: f.max ?? "", placeholder: "max" });
    const site = el("input", { type: "text", value: f.site ?? "", placeholder: "site" });
    const from = el("input", { type: "date", value: f.from ?? "" });
    const to = el("input", { type: "date", value: f.to ?? "" });
    const asText = (node: HTMLInputElement) => node.value.trim() || null;
    const asNumber = (node: HTMLInputElement) =>
      node.value.trim() === "" ? null : Number(node.value);
    const apply = el("button", {
      class: "apply-filter",
      onclick: () => {
        this.state.filter = {
          variable: asText(variable),
          min: asNumber(min),
          max: asNumber(max),
          site: asText(site),
          from: asText(from),
          to: asText(to),
        };
        void this.pushAndRefresh();
      },
    }, "Apply");
    const resetBtn = el("button", {
      onclick: () => {
        this.state.filter = { variable: null, min: null, max: null, site: null, from: null, to: null };
        void this.render();
        this.onState(this.state);
      },
    }, "Clear");
    return el("div", { class: "filter-panel" },
      el("h3", {}, "Filter"),
      variable, min, max, site, from, to,
      el("div", { class: "filter-actions" }, apply, resetBtn),
    );
  }

  private showBanner(message: string): void {
    clear(this.banner);
    this.banner.hidden = false;
    this.banner.append(
      el("span", {}, message),
      el("button", { onclick: () => { this.banner.hidden = true; } }, "dismiss"),
    );
  }

  // ------------------------------------------------------------- behaviour

  private startPan(down: MouseEvent): void {
    down.preventDefault();
    const scale = this.state.viewport.degPerPx;
    const start = { x: down.clientX, y: down.clientY };
    const origin = { ...this.state.viewport };
    const move = (ev: MouseEvent) => {
      this.state.viewport.lon = origin.lon - (ev.clientX - start.x) * scale;
      this.state.viewport.lat = origin.lat + (ev.clientY - start.y) * scale;
    };
    const up = () => {
      window.removeEventListener("mousemove", move);
      window.removeEventListener("mouseup", up);
      void this.pushAndRefresh();
    };
    window.addEventListener("mousemove", move);
    window.addEventListener("mouseup", up);
  }

  private onWheel(ev: WheelEvent): void {
    ev.preventDefault();
    this.zoomBy(ev.deltaY > 0 ? 2 : 0.5);
  }

  zoomBy(factor: number): void {
    this.state.viewport.degPerPx = Math.min(1, Math.max(1e-7, this.state.viewport.degPerPx * factor));
    void this.pushAndRefresh();
  }

  centerOn(lat: number, lon: number, degPerPx?: number): void {
    this.state.viewport.lat = lat;
    this.state.viewport.lon = lon;
    if (degPerPx) this.state.viewport.degPerPx = degPerPx;
    void this.pushAndRefresh();
  }

  private async pushAndRefresh(): Promise<void> {
    this.onState(this.state);
    await this.refresh();
  }

  // ------------------------------------------------------------- rendering

  async refresh(): Promise<void> {
    const box = this.box();
    clear(this.canvas);
    this.closePopup();
    if (this.state.baseMap) this.canvas.append(this.baseLayer(box));
    this.canvas.append(...this.rasterLayers(box));
    this.canvas.append(await this.featureLayer(box));
  }

  private baseLayer(box: ScreenBox): HTMLElement {
    const holder = el("div", { class: "base-layer" });
    if (!this.config.baseMapUrl) {
      holder.append(this.graticule(box));
      return holder;
    }
    const z = Math.min(19, Math.max(1,
      Math.round(Math.log2(360 / (TILE * this.state.viewport.degPerPx)))));
    const n = 2 ** z;
    const lonToX = (lon: number) => ((lon + 180) / 360) * n;
    const latToY = (lat: number) => {
      const rad = (lat * Math.PI) / 180;
      return ((1 - Math.log(Math.tan(rad) + 1 / Math.cos(rad)) / Math.PI) / 2) * n;
    };
    const yToLat = (y: number) =>
      (Math.atan(Math.sinh(Math.PI * (1 - (2 * y) / n))) * 180) / Math.PI;
    const x0 = Math.floor(lonToX(box.west));
    const x1 = Math.floor(lonToX(box.east));
    const y0 = Math.max(0, Math.floor(latToY(Math.min(85, box.north))));
    const y1 = Math.min(n - 1, Math.floor(latToY(Math.max(-85, box.south))));
    for (let ty = y0; ty <= y1; ty++) {
      for (let tx = x0; tx <= x1; tx++) {
        const wrapped = ((tx % n) + n) % n;
        const lonLeft = (tx / n) * 360 - 180;
        const lonRight = ((tx + 1) / n) * 360 - 180;
        const latTop = yToLat(ty);
        const latBottom = yToLat(ty + 1);
        const [left, top] = this.toScreen(box, lonLeft, latTop);
        const [right, bottom] = this.toScreen(box, lonRight, latBottom);
        holder.append(el("img", {
          class: "base-tile",
          src: this.config.baseMapUrl
            .replace("{z}", String(z)).replace("{x}", String(wrapped)).replace("{y}", String(ty)),
          style: `left:${left}px;top:${top}px;width:${right - left}px;height:${bottom - top}px`,
          alt: "",
        }));
      }
    }
    return holder;
  }

  private graticule(box: ScreenBox): SVGSVGElement {
    const svg = svgEl("svg", {
      class: "graticule",
      width: box.width,
      height: box.height,
      viewBox: `0 0 ${box.width} ${box.height}`,
    });
    const span = Math.max(box.east - box.west, box.north - box.south);
    const step = [30, 10, 5, 1, 0.5, 0.1, 0.05, 0.01, 0.005, 0.001]
      .find((s) => span / s <= 12) ?? 0.001;
    for (let lon = Math.ceil(box.west / step) * step; lon <= box.east; lon += step) {
      const [x] = this.toScreen(box, lon, box.north);
      svg.append(svgEl("line", { x1: x, y1: 0, x2: x, y2: box.height }));
      svg.append(svgEl("text", { x: x + 3, y: 12 }, lon.toFixed(3)));
    }
    for (let lat = Math.ceil(box.south / step) * step; lat <= box.north; lat += step) {
      const [, y] = this.toScreen(box, box.west, lat);
      svg.append(svgEl("line", { x1: 0, y1: y, x2: box.width, y2: y }));
      svg.append(svgEl("text", { x: 3, y: y - 3 }, lat.toFixed(3)));
    }
    return svg;
  }

  private rasterLayers(box: ScreenBox): HTMLElement[] {
    const visible = this.state.layers.filter((l) => isRasterLayer(l) && l.visible);
    if (!visible.length) return [];
    const out: HTMLElement[] = [];
    const unresolved: LayerChoice[] = [];
    for (const layer of visible) {
      const meta = this.rasterMeta.get(layer.id.slice("raster:".length));
      if (meta && meta.status === "ready" && meta.enabled) {
        out.push(this.tileMosaic(box, layer, meta));
      } else if (!this.api.token) {
        unresolved.push(layer);
      }
    }
    if (unresolved.length) {
      // without catalogue access, fall back to one server-rendered image
      const names = unresolved.map((l) => l.id.slice("raster:".length));
      out.push(el("div", { class: "raster-layer" }, el("img", {
        class: "map-image",
        src: this.api.mapUrl(this.bboxString(), box.width, box.height, names),
        style: `left:0;top:0;width:${box.width}px;height:${box.height}px;opacity:${unresolved[0]!.opacity}`,
        alt: "",
      })));
    }
    return out;
  }

  private tileMosaic(box: ScreenBox, layer: LayerChoice, meta: RasterInfo): HTMLElement {
    const holder = el("div", { class: "raster-layer", "data-raster": meta.name });
    const [minLon, minLat, maxLon, maxLat] = meta.bounds;
    if (minLon > box.east || maxLon < box.west || minLat > box.north || maxLat < box.south) {
      return holder;
    }
    const levels = levelCount(meta.height, meta.width);
    const pixX = meta.pixel_size[0];
    const pixY = meta.pixel_size[1];
    const wanted = Math.log2(this.state.viewport.degPerPx / pixX);
    const level = Math.min(levels - 1, Math.max(0, Math.round(wanted)));
    let levelW = meta.width;
    let levelH = meta.height;
    for (let i = 0; i < level; i++) {
      levelW = Math.ceil(levelW / 2);
      levelH = Math.ceil(levelH / 2);
    }
    const geoTileW = TILE * pixX * 2 ** level;
    const geoTileH = TILE * pixY * 2 ** level;
    const rows = Math.ceil(levelH / TILE);
    const cols = Math.ceil(levelW / TILE);
    for (let row = 0; row < rows; row++) {
      const latTop = maxLat - row * geoTileH;
      const latBottom = latTop - geoTileH;
      if (latBottom > box.north || latTop < box.south) continue;
      for (let col = 0; col < cols; col++) {
        const lonLeft = minLon + col * geoTileW;
        if (lonLeft > box.east || lonLeft + geoTileW < box.west) continue;
        const [left, top] = this.toScreen(box, lonLeft, latTop);
        const [right, bottom] = this.toScreen(box, lonLeft + geoTileW, latBottom);
        holder.append(el("img", {
          class: "raster-tile",
          src: this.api.tileUrl(meta.name, level, col, row),
          style: `left:${left}px;top:${top}px;width:${right - left}px;`
            + `height:${bottom - top}px;opacity:${layer.opacity}`,
          alt: "",
        }));
      }
    }
    return holder;
  }

  private filterParams(): FilterParams {
    const f = this.state.filter;
    return {
      var: f.variable ?? undefined,
      min: f.min ?? undefined,
      max: f.max ?? undefined,
      site: f.site ?? undefined,
      from: f.from ?? undefined,
      to: f.to ?? undefined,
    };
  }

  private async featureLayer(box: ScreenBox): Promise<SVGSVGElement> {
    const svg = svgEl("svg", {
      class: "features",
      width: box.width,
      height: box.height,
      viewBox: `0 0 ${box.width} ${box.height}`,
    });
    this.rendered.clear();
    const layers = this.state.layers.filter((l) => isFeatureLayer(l) && l.visible);
    for (const layer of layers) {
      let collection;
      try {
        collection = await this.api.features(layer.id, {
          ...this.filterParams(),
          bbox: this.bboxString(),
        });
      } catch (error) {
        if (!(error instanceof ApiError)) throw error;
        this.showBanner(`${layer.id}: ${error.message}`);
        continue;
      }
      this.rendered.set(layer.id, collection.features);
      for (const feature of collection.features) {
        const [lon, lat] = feature.geometry.coordinates;
        const [x, y] = this.toScreen(box, lon, lat);
        svg.append(svgEl("circle", {
          cx: x,
          cy: y,
          r: 5,
          fill: featureColor(layer.id),
          "fill-opacity": layer.opacity,
          class: "feature-dot",
          "data-id": feature.properties.id,
          "data-layer": layer.id,
          onclick: () => void this.openPopup(feature, [x, y]),
        }));
      }
    }
    return svg;
  }

  // ---------------------------------------------------------------- popup

  async openPopup(feature: PointFeature, at: [number, number]): Promise<void> {
    this.closePopup();
    const props = feature.properties;
    const popup = el("div", {
      class: "popup",
      style: `left:${at[0] + 8}px;top:${at[1] + 8}px`,
    },
      el("button", { class: "popup-close", onclick: () => this.closePopup() }, "×"),
      el("h4", {}, String(props.id)),
      propList(props),
    );
    this.popup = popup;
    this.canvas.append(popup);
    if (this.api.token && (props.collection === "lab" || props.collection === "drone")) {
      try {
        const detail: Sample = await this.api.getSample(
          props.collection,
          String(props.id),
        );
        popup.append(
          el("div", { class: "popup-spectrum" },
            el("span", { class: "muted" }, `${detail.spectrum.wavelengths.length} points`),
            sparkline(detail.spectrum)),
        );
      } catch {
        // popup already shows the feature's own properties
      }
    }
  }

  closePopup(): void {
    this.popup?.remove();
    this.popup = null;
  }

  /** Feature dots currently on screen; a test convenience. */
  dots(): SVGCircleElement[] {
    return Array.from(this.root.querySelectorAll("circle.feature-dot"));
  }
}
