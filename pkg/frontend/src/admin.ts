/** Management console. Sections appear by role: registered accounts get
 * bulk upload and predictor runs, admins also get approvals, variables,
 * raster publishing and model registration.
 *
 * Every control that can change server state carries data-mutates="1" so
 * the anonymous-surface check stays mechanical.
 */

import { Api, ApiError } from "./api.js";
import { clear, el } from "./dom.js";
import type { BatchReport, JobInfo } from "./types.js";

export class AdminView {
  constructor(
    private readonly api: Api,
    private readonly root: HTMLElement,
    private readonly role: () => string | null,
    private readonly onCatalogChange: () => void,
  ) {}

  async render(): Promise<void> {
    clear(this.root);
    const role = this.role();
    if (!role) {
      this.root.append(el("p", { class: "notice" }, "Sign in to manage data."));
      return;
    }
    const grid = el("div", { class: "admin-grid" });
    this.root.append(grid);
    if (role === "admin") {
      grid.append(await this.approvalsSection());
      grid.append(await this.variablesSection(true));
      grid.append(await this.rastersSection());
      grid.append(await this.modelsSection(true));
    } else {
      grid.append(await this.variablesSection(false));
      grid.append(await this.modelsSection(false));
    }
    grid.append(this.batchSection());
  }

  private section(title: string, ...children: (HTMLElement | string)[]): HTMLElement {
    return el("section", { class: "admin-section" }, el("h3", {}, title), ...children);
  }

  private errorNote(error: unknown): HTMLElement {
    const message = error instanceof ApiError ? error.message : String(error);
    return el("p", { class: "notice error" }, message);
  }

  // ------------------------------------------------------------- approvals

  private async approvalsSection(): Promise<HTMLElement> {
    const body = el("div", { class: "approvals" });
    const reload = async () => {
      clear(body);
      try {
        const pending = await this.api.listUsers(true);
        if (!pending.length) {
          body.append(el("p", { class: "muted" }, "no pending accounts"));
          return;
        }
        for (const user of pending) {
          body.append(el("div", { class: "pending-user", "data-username": user.username },
            el("span", { class: "mono" }, user.username),
            el("button", {
              class: "approve",
              "data-mutates": "1",
              onclick: async () => {
                await this.api.approveUser(user.username);
                await reload();
              },
            }, "approve"),
          ));
        }
      } catch (error) {
        body.append(this.errorNote(error));
      }
    };
    await reload();
    return this.section("Pending accounts", body);
  }

  // ------------------------------------------------------------- variables

  private async variablesSection(canCreate: boolean): Promise<HTMLElement> {
    const listing = el("ul", { class: "variable-list" });
    const reload = async () => {
      clear(listing);
      try {
        for (const v of await this.api.listVariables()) {
          listing.append(el("li", {},
            el("strong", {}, v.name),
            v.unit ? ` [${v.unit}]` : "",
            v.description ? ` ${v.description}` : ""));
        }
      } catch (error) {
        listing.append(el("li", {}, this.errorNote(error)));
      }
    };
    await reload();
    const parts: HTMLElement[] = [listing];
    if (canCreate) {
      const name = el("input", { type: "text", placeholder: "name", required: true });
      const unit = el("input", { type: "text", placeholder: "unit" });
      const description = el("input", { type: "text", placeholder: "description" });
      const note = el("span", { class: "muted" });
      parts.push(el("form", {
        class: "variable-form",
        onsubmit: async (ev: Event) => {
          ev.preventDefault();
          note.textContent = "";
          try {
            await this.api.createVariable(name.value.trim(), unit.value.trim(), description.value.trim());
            name.value = unit.value = description.value = "";
            await reload();
            this.onCatalogChange();
          } catch (error) {
            note.textContent = error instanceof ApiError ? error.message : String(error);
          }
        },
      }, name, unit, description,
        el("button", { type: "submit", "data-mutates": "1" }, "create variable"), note));
    }
    return this.section("Soil variables", ...parts);
  }

  // --------------------------------------------------------------- rasters

  private async rastersSection(): Promise<HTMLElement> {
    const listing = el("div", { class: "raster-list" });
    const progress = el("p", { class: "job-progress muted" });
    const reload = async () => {
      clear(listing);
      try {
        for (const raster of await this.api.listRasters()) {
          const toggle = el("button", {
            class: "raster-toggle",
            "data-mutates": "1",
            "data-raster": raster.name,
            onclick: async () => {
              await this.api.setRasterEnabled(raster.id, !raster.enabled);
              await reload();
              this.onCatalogChange();
            },
          }, raster.enabled ? "disable" : "enable");
          listing.append(el("div", { class: "raster-row" },
            el("span", { class: "mono" }, raster.name),
            el("span", { class: "muted" },
              ` ${raster.width}x${raster.height} ${raster.status}`
              + `${raster.enabled ? "" : " (hidden)"}`),
            toggle));
        }
      } catch (error) {
        listing.append(this.errorNote(error));
      }
    };
    await reload();
    const name = el("input", { type: "text", placeholder: "layer name", required: true });
    const file = el("input", { type: "file", accept: ".tif,.tiff" });
    const form = el("form", {
      class: "raster-form",
      onsubmit: async (ev: Event) => {
        ev.preventDefault();
        const picked = file.files?.[0];
        if (!picked || !name.value.trim()) return;
        progress.textContent = "uploading";
        try {
          const handle = await this.api.uploadRaster(
            name.value.trim(), await picked.arrayBuffer(), picked.name);
          const job = await this.api.waitForJob(handle.job_id, {
            timeoutMs: 300_000,
            onUpdate: (j: JobInfo) => { progress.textContent = `overview build: ${j.status}`; },
          });
          progress.textContent = job.status === "done"
            ? "raster published"
            : `failed: ${job.error ?? "unknown"}`;
          await reload();
          this.onCatalogChange();
        } catch (error) {
          progress.textContent = error instanceof ApiError ? error.message : String(error);
        }
      },
    }, name, file, el("button", { type: "submit", "data-mutates": "1" }, "upload raster"));
    return this.section("Raster layers", listing, form, progress);
  }

  // ---------------------------------------------------------------- models

  private async modelsSection(canCreate: boolean): Promise<HTMLElement> {
    const listing = el("div", { class: "model-list" });
    const progress = el("p", { class: "job-progress muted" });
    const reload = async () => {
      clear(listing);
      try {
        for (const model of await this.api.listModels()) {
          const run = el("button", {
            class: "run-model",
            "data-mutates": "1",
            "data-model": model.id,
            onclick: async () => {
              progress.textContent = "queued";
              try {
                const handle = await this.api.runModel(model.id);
                const job = await this.api.waitForJob(handle.job_id, {
                  timeoutMs: 300_000,
                  onUpdate: (j: JobInfo) => { progress.textContent = `run: ${j.status}`; },
                });
                if (job.status === "done") {
                  const written = (job.result as { predictions_written?: number } | null)
                    ?.predictions_written ?? 0;
                  progress.textContent = `done, ${written} predictions written`;
                } else {
                  progress.textContent = `failed: ${job.error ?? "unknown"}`;
                }
              } catch (error) {
                progress.textContent =
                  error instanceof ApiError ? error.message : String(error);
              }
            },
          }, "run");
          listing.append(el("div", { class: "model-row", "data-model": model.id },
            el("span", { class: "mono" }, model.name),
            el("span", { class: "muted" },
              ` ${model.kind}: ${model.trained_variables.join(", ")}`),
            run));
        }
      } catch (error) {
        listing.append(this.errorNote(error));
      }
    };
    await reload();
    const parts: (HTMLElement | string)[] = [listing];
    if (canCreate) {
      const manifest = el("textarea", {
        class: "manifest-input",
        rows: 6,
        placeholder: '{"name": "...", "kind": "knn", ...}',
      });
      const note = el("span", { class: "muted" });
      parts.push(el("form", {
        class: "model-form",
        onsubmit: async (ev: Event) => {
          ev.preventDefault();
          note.textContent = "";
          try {
            await this.api.createModel(JSON.parse(manifest.value));
            manifest.value = "";
            await reload();
            this.onCatalogChange();
          } catch (error) {
            note.textContent = error instanceof ApiError
              ? error.message
              : `manifest is not valid JSON: ${error}`;
          }
        },
      }, manifest, el("button", { type: "submit", "data-mutates": "1" }, "register model"), note));
    }
    parts.push(progress);
    return this.section("Predictors", ...parts);
  }

  // ----------------------------------------------------------- bulk upload

  private batchSection(): HTMLElement {
    const collection = el("select", {},
      el("option", { value: "lab" }, "lab"),
      el("option", { value: "drone" }, "drone"));
    const atomic = el("input", { type: "checkbox" });
    const text = el("textarea", {
      class: "batch-input",
      rows: 8,
      placeholder: "paste CSV rows here, header line first",
    });
    const file = el("input", { type: "file", accept: ".csv" });
    const report = el("div", { class: "batch-report" });
    const form = el("form", {
      class: "batch-form",
      onsubmit: async (ev: Event) => {
        ev.preventDefault();
        clear(report);
        const picked = file.files?.[0];
        const csvText = picked ? await picked.text() : text.value;
        if (!csvText.trim()) return;
        try {
          const summary = await this.api.uploadBatch(
            collection.value as "lab" | "drone", csvText, atomic.checked);
          report.append(this.batchReport(summary));
        } catch (error) {
          report.append(this.errorNote(error));
        }
      },
    },
      el("div", {}, collection, el("label", {}, atomic, " all-or-nothing")),
      text, file,
      el("button", { type: "submit", class: "batch-submit", "data-mutates": "1" }, "upload"));
    return this.section("Bulk upload", form, report);
  }

  private batchReport(summary: BatchReport): HTMLElement {
    const head = el("p", { class: "batch-summary" },
      `${summary.accepted} accepted, ${summary.rejected} rejected`);
    if (!summary.row_errors.length) return el("div", {}, head);
    const rows = summary.row_errors.map((e) =>
      el("tr", {},
        el("td", {}, String(e.row_number)),
        el("td", { class: "mono" }, e.code),
        el("td", {}, e.message)));
    return el("div", {}, head,
      el("div", { class: "table-scroll" },
        el("table", { class: "row-errors" },
          el("thead", {}, el("tr", {}, el("th", {}, "row"), el("th", {}, "code"), el("th", {}, "message"))),
          el("tbody", {}, ...rows))));
  }
}
