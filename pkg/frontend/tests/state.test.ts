import { describe, expect, it } from "vitest";
import {
  AppState,
  canon,
  decodeState,
  defaultState,
  encodeState,
  EMPTY_FILTER,
  statesEqual,
} from "../src/state.js";

/** Deterministic PRNG so failures replay. */
function mulberry32(seed: number): () => number {
  let a = seed >>> 0;
  return () => {
    a = (a + 0x6d2b79f5) >>> 0;
    let t = a;
    t = Math.imul(t ^ (t >>> 15), t | 1);
    t ^= t + Math.imul(t ^ (t >>> 7), t | 61);
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

const LAYER_IDS = [
  "drone",
  "lab:9f3b2a6c41de4b52",
  "lab:Argilla",
  "lab:Sabbia totale",
  "pred:model-3:Argilla",
  "raster:DEM 2024",
  "raster:ndvi|v2@final",
];

function randomState(rand: () => number): AppState {
  const state = defaultState();
  state.view = (["map", "lab", "drone", "admin"] as const)[Math.floor(rand() * 4)]!;
  state.viewport = {
    lat: canon(rand() * 180 - 90),
    lon: canon(rand() * 360 - 180),
    degPerPx: canon(10 ** (rand() * 6 - 7)),
  };
  const count = Math.floor(rand() * LAYER_IDS.length);
  const pool = [...LAYER_IDS];
  state.layers = [];
  for (let i = 0; i < count; i++) {
    const pick = Math.floor(rand() * pool.length);
    state.layers.push({
      id: pool.splice(pick, 1)[0]!,
      visible: rand() < 0.5,
      opacity: canon(rand()),
    });
  }
  state.baseMap = rand() < 0.5;
  state.filter = {
    variable: rand() < 0.5 ? "Argilla" : null,
    min: rand() < 0.5 ? canon(rand() * 1000) : null,
    max: rand() < 0.5 ? canon(rand() * 1000) : null,
    site: rand() < 0.5 ? "Borgo San Pietro" : null,
    from: rand() < 0.5 ? "2022-03-01" : null,
    to: rand() < 0.5 ? "2022-11-30" : null,
  };
  if (!state.layers.length) {
    // encoding omits an empty layer list and decoding restores defaults,
    // so a canonical state always names its layers
    state.layers = defaultState().layers;
  }
  return state;
}

describe("permalink codec", () => {
  it("round-trips the default state", () => {
    const state = defaultState();
    expect(decodeState(encodeState(state))).toEqual(state);
  });

  it("round-trips layer ids containing separators and spaces", () => {
    const state = defaultState();
    state.layers = LAYER_IDS.map((id, i) => ({
      id,
      visible: i % 2 === 0,
      opacity: canon(i / LAYER_IDS.length),
    }));
    const back = decodeState(encodeState(state));
    expect(back.layers).toEqual(state.layers);
  });

  it("round-trips 300 randomized states exactly", () => {
    const rand = mulberry32(20260816);
    for (let i = 0; i < 300; i++) {
      const state = randomState(rand);
      const back = decodeState(encodeState(state));
      expect(back).toEqual(state);
      expect(statesEqual(back, state)).toBe(true);
    }
  });

  it("treats the encoded form as a fixed point", () => {
    const rand = mulberry32(7);
    for (let i = 0; i < 100; i++) {
      const once = encodeState(randomState(rand));
      expect(encodeState(decodeState(once))).toBe(once);
    }
  });

  it("ignores junk and out-of-range values", () => {
    const cases = [
      "",
      "#",
      "#not&even=params",
      "#view=bogus&c=999,x,-2",
      "#c=91,181,0",
      "#l=@@|@",
      "#min=NaN&max=Infinity",
    ];
    for (const hash of cases) {
      const state = decodeState(hash);
      expect(["map", "lab", "drone", "admin"]).toContain(state.view);
      expect(Math.abs(state.viewport.lat)).toBeLessThanOrEqual(90);
      expect(Math.abs(state.viewport.lon)).toBeLessThanOrEqual(180);
      expect(state.viewport.degPerPx).toBeGreaterThan(0);
      expect(state.layers.length).toBeGreaterThan(0);
    }
  });

  it("keeps in-range parts of a partially bad center", () => {
    const state = decodeState("#c=46.5,999,0.01");
    expect(state.viewport.lat).toBe(46.5);
    expect(state.viewport.lon).toBe(defaultState().viewport.lon);
    expect(state.viewport.degPerPx).toBe(0.01);
  });

  it("clamps opacity into [0, 1]", () => {
    const state = decodeState("#l=lab@1@7|drone@1@-3");
    expect(state.layers.map((l) => l.opacity)).toEqual([1, 0]);
  });

  it("decodes a hand-written minimal hash", () => {
    const state = decodeState("#view=lab&var=Argilla&min=200&max=400");
    expect(state.view).toBe("lab");
    expect(state.filter).toEqual({
      ...EMPTY_FILTER,
      variable: "Argilla",
      min: 200,
      max: 400,
    });
  });
});
