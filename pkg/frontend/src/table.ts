/** Tabular sample browser: server-side filtering, sorting and paging over
 * the sample query endpoint, with per-row spectra and a map jump. */

import { Api, ApiError } from "./api.js";
import { clear, el } from "./dom.js";
import { sparkline } from "./sparkline.js";
import type { AppState } from "./state.js";
import type { FilterParams, QueryPage, Sample } from "./types.js";

const PAGE_SIZE = 25;

export class TableView {
  collection: "lab" | "drone" = "lab";
  private sort = "id";
  private desc = false;
  private offset = 0;
  private body!: HTMLElement;
  private pager!: HTMLElement;
  /** last page fetched; read by tests */
  page: QueryPage | null = null;

  constructor(
    private readonly api: Api,
    private readonly root: HTMLElement,
    private readonly state: AppState,
    private readonly onLocate: (lat: number, lon: number) => void,
    private readonly onCollection: (collection: "lab" | "drone") => void,
  ) {}

  /** Reset paging when the collection changes hands. */
  setCollection(collection: "lab" | "drone"): void {
    if (collection !== this.collection) {
      this.collection = collection;
      this.offset = 0;
      this.sort = "id";
      this.desc = false;
    }
  }

  async render(): Promise<void> {
    clear(this.root);
    if (!this.api.token) {
      this.root.append(el("p", { class: "notice" },
        "Sign in to browse sample records. The map stays open to everyone."));
      return;
    }
    const pick = (name: "lab" | "drone") =>
      el("button", {
        class: this.collection === name ? "tab active" : "tab",
        "data-collection": name,
        onclick: () => this.onCollection(name),
      }, name);
    const exportLink = el("button", {
      class: "export-link",
      onclick: () => void this.downloadCsv(),
    }, "download CSV");
    this.body = el("div", { class: "table-body" });
    this.pager = el("div", { class: "pager" });
    this.root.append(
      el("div", { class: "table-controls" }, pick("lab"), pick("drone"), this.filterBar(), exportLink),
      this.body,
      this.pager,
    );
    await this.load();
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

  private async downloadCsv(): Promise<void> {
    const text = await this.api.exportCsv(this.collection, this.filterParams());
    const url = URL.createObjectURL(new Blob([text], { type: "text/csv" }));
    const link = el("a", { href: url, download: `${this.collection}.csv` });
    document.body.append(link);
    link.click();
    link.remove();
    URL.revokeObjectURL(url);
  }

  private filterBar(): HTMLElement {
    const f = this.state.filter;
    const variable = el("input", { type: "text", value: f.variable ?? "", placeholder: "variable" });
    const min = el("input", { type: "number", value: f.min ?? "", placeholder: "min" });
    const max = el("input", { type: "number", value: f.max ?? "", placeholder: "max" });
    const site = el("input", { type: "text", value: f.site ?? "", placeholder: "site" });
    return el("span", { class: "table-filter" },
      variable, min, max, site,
      el("button", {
        class: "apply-filter",
        onclick: () => {
          const num = (node: HTMLInputElement) =>
            node.value.trim() === "" ? null : Number(node.value);
          const text = (node: HTMLInputElement) => node.value.trim() || null;
          this.state.filter = {
            ...this.state.filter,
            variable: text(variable),
            min: num(min),
            max: num(max),
            site: text(site),
          };
          this.offset = 0;
          void this.render();
        },
      }, "Apply"),
    );
  }

  async load(): Promise<void> {
    clear(this.body);
    let page: QueryPage;
    try {
      page = await this.api.querySamples(this.collection, {
        ...this.filterParams(),
        sort: this.sort,
        desc: this.desc,
        offset: this.offset,
        limit: PAGE_SIZE,
      });
    } catch (error) {
      if (!(error instanceof ApiError)) throw error;
      this.body.append(el("p", { class: "notice error" }, error.message));
      return;
    }
    this.page = page;
    this.body.append(this.table(page.items));
    this.renderPager(page);
  }

  private header(field: string, label: string): HTMLElement {
    const marker = this.sort === field ? (this.desc ? " ↓" : " ↑") : "";
    return el("th", {
      "data-sort": field,
      onclick: () => {
        if (this.sort === field) {
          this.desc = !this.desc;
        } else {
          this.sort = field;
          this.desc = false;
        }
        void this.load();
      },
    }, label + marker);
  }

  private table(items: Sample[]): HTMLElement {
    const isLab = this.collection === "lab";
    const head = el("tr", {},
      this.header("id", "id"),
      this.header("lat", "lat"),
      this.header("lon", "lon"),
      isLab ? el("th", {}, "sites") : this.header("acquired_at", "acquired"),
      el("th", {}, isLab ? "measurements" : ""),
      el("th", {}, "spectrum"),
      el("th", {}, ""),
    );
    const rows = items.map((sample) => this.row(sample, isLab));
    return el("div", { class: "table-scroll" },
      el("table", { class: "samples" }, el("thead", {}, head), el("tbody", {}, ...rows)));
  }

  private row(sample: Sample, isLab: boolean): HTMLElement {
    const measurements = Object.entries(sample.measurements ?? {})
      .map(([name, value]) => `${name}=${value}`)
      .join(", ");
    return el("tr", { "data-id": sample.id },
      el("td", { class: "mono" }, sample.id),
      el("td", {}, sample.lat.toFixed(5)),
      el("td", {}, sample.lon.toFixed(5)),
      el("td", {}, isLab ? (sample.sites ?? []).join(", ") : (sample.acquired_at ?? "")),
      el("td", {}, isLab ? measurements : ""),
      el("td", {}, sparkline(sample.spectrum)),
      el("td", {}, el("button", {
        class: "locate",
        title: "show on map",
        onclick: () => this.onLocate(sample.lat, sample.lon),
      }, "◎")),
    );
  }

  private renderPager(page: QueryPage): void {
    clear(this.pager);
    const last = Math.min(page.offset + page.items.length, page.total);
    const label = page.total === 0
      ? "no matching samples"
      : `${page.offset + 1}-${last} of ${page.total}`;
    this.pager.append(
      el("button", {
        class: "page-prev",
        disabled: page.offset === 0 ? true : undefined,
        onclick: () => {
          this.offset = Math.max(0, this.offset - PAGE_SIZE);
          void this.load();
        },
      }, "prev"),
      el("span", { class: "page-label" }, label),
      el("button", {
        class: "page-next",
        disabled: last >= page.total ? true : undefined,
        onclick: () => {
          this.offset += PAGE_SIZE;
          void this.load();
        },
      }, "next"),
    );
  }
}
