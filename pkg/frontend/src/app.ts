/** Application shell: header with auth controls, view tabs, and the
 * hash <-> state round trip that makes every screen a shareable link.
 *
 * Auth controls are the one mutation-adjacent surface an anonymous
 * visitor sees; register and login are open endpoints by design, so
 * they carry no data-mutates marker.
 */

import { AdminView } from "./admin.js";
import { Api, ApiError, FetchLike } from "./api.js";
import { clear, el } from "./dom.js";
import { MapView } from "./map.js";
import {
  AppState,
  decodeState,
  defaultState,
  encodeState,
  statesEqual,
  ViewName,
} from "./state.js";
import { TableView } from "./table.js";
import type { LoginResult, UiConfig } from "./types.js";
import { DEFAULT_CONFIG } from "./types.js";

const SESSION_KEY = "soilatlas.session";

interface Session {
  token: string;
  username: string;
  role: string;
}

export class App {
  readonly api: Api;
  readonly state: AppState;
  readonly map: MapView;
  readonly table: TableView;
  readonly admin: AdminView;
  session: Session | null = null;

  private header!: HTMLElement;
  private viewRoot!: HTMLElement;
  private suppressHashEvent = false;
  private readonly hashHandler = () => void this.onHashChange();

  constructor(
    private readonly root: HTMLElement,
    readonly config: UiConfig = DEFAULT_CONFIG,
    fetchFn?: FetchLike,
  ) {
    this.api = new Api(config.apiBase, fetchFn);
    this.state = defaultState();
    this.header = el("header", { class: "top-bar" });
    this.viewRoot = el("main", { class: "view-root" });
    this.map = new MapView(this.api, this.viewRoot, this.state,
      () => this.pushState(), config);
    this.table = new TableView(this.api, this.viewRoot, this.state,
      (lat, lon) => this.locate(lat, lon),
      (collection) => void this.setView(collection));
    this.admin = new AdminView(this.api, this.viewRoot,
      () => this.session?.role ?? null,
      () => { /* views re-read the catalogue each time they render */ });
  }

  // ---------------------------------------------------------------- boot

  async start(): Promise<void> {
    this.restoreSession();
    clear(this.root);
    this.root.append(this.header, this.viewRoot);
    window.addEventListener("hashchange", this.hashHandler);
    Object.assign(this.state, decodeState(window.location.hash));
    this.renderHeader();
    await this.renderView();
  }

  stop(): void {
    window.removeEventListener("hashchange", this.hashHandler);
  }

  // ------------------------------------------------------------- sessions

  private restoreSession(): void {
    try {
      const raw = window.sessionStorage.getItem(SESSION_KEY);
      if (!raw) return;
      const parsed = JSON.parse(raw) as Session;
      if (parsed && parsed.token) {
        this.session = parsed;
        this.api.token = parsed.token;
      }
    } catch {
      this.session = null;
    }
  }

  private storeSession(): void {
    if (this.session) {
      window.sessionStorage.setItem(SESSION_KEY, JSON.stringify(this.session));
    } else {
      window.sessionStorage.removeItem(SESSION_KEY);
    }
  }

  async signIn(username: string, password: string): Promise<LoginResult> {
    const result = await this.api.login(username, password);
    this.session = {
      token: result.token,
      username: result.username,
      role: result.role,
    };
    this.storeSession();
    this.renderHeader();
    await this.renderView();
    return result;
  }

  signOut(): void {
    this.session = null;
    this.api.token = null;
    this.storeSession();
    this.renderHeader();
    void this.renderView();
  }

  // ----------------------------------------------------------- navigation

  async setView(view: ViewName): Promise<void> {
    this.state.view = view;
    this.pushState();
    this.renderHeader();
    await this.renderView();
  }

  private locate(lat: number, lon: number): void {
    this.state.view = "map";
    this.state.viewport.lat = lat;
    this.state.viewport.lon = lon;
    this.pushState();
    this.renderHeader();
    void this.renderView();
  }

  /** Reflect current state into the address bar without re-entering render. */
  pushState(): void {
    const encoded = encodeState(this.state);
    if (window.location.hash !== encoded) {
      this.suppressHashEvent = true;
      window.location.hash = encoded;
    }
  }

  private async onHashChange(): Promise<void> {
    if (this.suppressHashEvent) {
      this.suppressHashEvent = false;
      return;
    }
    const incoming = decodeState(window.location.hash);
    if (statesEqual(incoming, this.state)) return;
    Object.assign(this.state, incoming);
    this.renderHeader();
    await this.renderView();
  }

  // -------------------------------------------------------------- chrome

  renderHeader(): void {
    clear(this.header);
    const tab = (view: ViewName, label: string) =>
      el("button", {
        class: this.state.view === view ? "nav-tab active" : "nav-tab",
        "data-view": view,
        onclick: () => void this.setView(view),
      }, label);
    const nav = el("nav", { class: "nav-tabs" }, tab("map", "Map"));
    if (this.session) {
      nav.append(tab("lab", "Lab samples"), tab("drone", "Drone samples"), tab("admin", "Manage"));
    }
    this.header.append(
      el("span", { class: "brand" }, "soilatlas"),
      nav,
      this.authBox(),
    );
  }

  private authBox(): HTMLElement {
    if (this.session) {
      return el("div", { class: "auth-box" },
        el("span", { class: "whoami" },
          `${this.session.username} (${this.session.role})`),
        el("button", {
          class: "sign-out",
          onclick: () => this.signOut(),
        }, "sign out"),
      );
    }
    const username = el("input", {
      type: "text", placeholder: "username", autocomplete: "username", name: "username",
    });
    const password = el("input", {
      type: "password", placeholder: "password", autocomplete: "current-password", name: "password",
    });
    const note = el("span", { class: "auth-note" });
    const busy = async (work: () => Promise<void>) => {
      note.textContent = "";
      note.classList.remove("error");
      try {
        await work();
      } catch (error) {
        note.textContent = error instanceof ApiError ? error.message : String(error);
        note.classList.add("error");
      }
    };
    return el("form", {
      class: "auth-box",
      onsubmit: (ev: Event) => {
        ev.preventDefault();
        void busy(async () => {
          await this.signIn(username.value.trim(), password.value);
        });
      },
    },
      username, password, note,
      el("button", { type: "submit", class: "sign-in" }, "sign in"),
      el("button", {
        type: "button",
        class: "register",
        onclick: () => void busy(async () => {
          const result = await this.api.register(username.value.trim(), password.value);
          note.textContent = `${result.username} registered, waiting for approval`;
        }),
      }, "register"),
    );
  }

  async renderView(): Promise<void> {
    switch (this.state.view) {
      case "map":
        await this.map.render();
        return;
      case "lab":
      case "drone":
        this.table.setCollection(this.state.view);
        await this.table.render();
        return;
      case "admin":
        await this.admin.render();
        return;
    }
  }
}

/** Fetch runtime settings served next to the static bundle. */
export async function loadConfig(
  fetchFn: FetchLike = (...args) => fetch(...args),
): Promise<UiConfig> {
  try {
    const response = await fetchFn("config");
    if (!response.ok) return DEFAULT_CONFIG;
    const body = (await response.json()) as Partial<UiConfig>;
    return { ...DEFAULT_CONFIG, ...body };
  } catch {
    return DEFAULT_CONFIG;
  }
}
