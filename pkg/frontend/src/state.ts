/**
 * Explorer state: selected county, slider levels, the last prediction, and
 * the comparison pin list.  Pure data plus small helpers; DOM wiring lives
 * in app.ts.
 */

import type {
  CoefficientsResponse,
  CountyInfo,
  GridInfo,
  PredictResponse,
} from "./api.js";

export interface Pin {
  countyId: string;
  n: number;
  b: number;
  response: PredictResponse;
}

export interface ExplorerState {
  grid: GridInfo | null;
  counties: CountyInfo[];
  selectedCounty: string | null;
  levelN: number;
  levelB: number;
  lastPrediction: PredictResponse | null;
  pins: Pin[];
}

export function initialState(): ExplorerState {
  return {
    grid: null,
    counties: [],
    selectedCounty: null,
    levelN: 0,
    levelB: 0,
    lastPrediction: null,
    pins: [],
  };
}

export function clampLevels(state: ExplorerState): void {
  if (!state.grid) return;
  state.levelN = Math.min(Math.max(state.levelN, 0), state.grid.levels_n - 1);
  state.levelB = Math.min(Math.max(state.levelB, 0), state.grid.levels_b - 1);
}

export function addPin(state: ExplorerState, response: PredictResponse): Pin[] {
  const pin: Pin = {
    countyId: response.county_id,
    n: response.n,
    b: response.b,
    response,
  };
  const key = pinKey(pin);
  if (!state.pins.some((p) => pinKey(p) === key)) {
    state.pins = [...state.pins, pin];
  }
  return state.pins;
}

export function removePin(state: ExplorerState, key: string): Pin[] {
  state.pins = state.pins.filter((p) => pinKey(p) !== key);
  return state.pins;
}

export function pinKey(pin: Pin): string {
  return `${pin.countyId}@${pin.n},${pin.b}`;
}

/** Per-county coefficient cache so re-selecting a county never refetches. */
export class CoefficientCache {
  private readonly entries = new Map<string, CoefficientsResponse>();
  fetchCount = 0;

  async get(
    countyId: string,
    loader: (id: string) => Promise<CoefficientsResponse>,
  ): Promise<CoefficientsResponse> {
    const hit = this.entries.get(countyId);
    if (hit) return hit;
    this.fetchCount += 1;
    const loaded = await loader(countyId);
    this.entries.set(countyId, loaded);
    return loaded;
  }
}

/** Hash fragment of the form #county=C001&n=2&b=3 (county selection only). */
export function parseHash(hash: string): {
  county: string | null;
  n: number;
  b: number;
} {
  const params = new URLSearchParams(hash.replace(/^#/, ""));
  const n = Number(params.get("n") ?? "0");
  const b = Number(params.get("b") ?? "0");
  return {
    county: params.get("county"),
    n: Number.isInteger(n) && n >= 0 ? n : 0,
    b: Number.isInteger(b) && b >= 0 ? b : 0,
  };
}

export function formatHash(state: ExplorerState): string {
  if (!state.selectedCounty) return "";
  const params = new URLSearchParams();
  params.set("county", state.selectedCounty);
  params.set("n", String(state.levelN));
  params.set("b", String(state.levelB));
  return `#${params.toString()}`;
}
