/**
 * Explorer controller: wires the county picker, level sliders, prediction
 * readout, band chart, and comparison pins to the prediction service.
 *
 * Concurrency rule: one in-flight prediction sweep at a time; a new sweep
 * aborts the previous one, and stale responses are never rendered.
 */

import { ApiClient, ApiError } from "./api.js";
import type { PredictResponse } from "./api.js";
import { renderBandChart } from "./chart.js";
import {
  CoefficientCache,
  ExplorerState,
  addPin,
  clampLevels,
  formatHash,
  initialState,
  parseHash,
  pinKey,
  removePin,
} from "./state.js";

export interface ExplorerOptions {
  /** Debounce for slider-release queries, in milliseconds. */
  debounceMs?: number;
  /** Called after the URL hash should change (overridable in tests). */
  setHash?: (hash: string) => void;
}

const COEFFICIENT_ORDER = ["mu0", "mu_n", "mu_b", "mu_nb"];
const COEFFICIENT_LABELS: Record<string, string> = {
  mu0: "baseline (μ₀)",
  mu_n: "naloxone effect (μ_n)",
  mu_b: "buprenorphine effect (μ_b)",
  mu_nb: "interaction (μ_nb)",
};

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  attrs: Record<string, string> = {},
  text = "",
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  for (const [key, value] of Object.entries(attrs)) {
    node.setAttribute(key, value);
  }
  if (text) node.textContent = text;
  return node;
}

export class Explorer {
  readonly state: ExplorerState = initialState();
  readonly cache = new CoefficientCache();
  private readonly debounceMs: number;
  private readonly setHash: (hash: string) => void;
  private sweepController: AbortController | null = null;
  private debounceTimer: ReturnType<typeof setTimeout> | null = null;
  private refreshEpoch = 0;

  // bound DOM nodes
  private picker!: HTMLSelectElement;
  private sliderN!: HTMLInputElement;
  private sliderB!: HTMLInputElement;
  private labelN!: HTMLElement;
  private labelB!: HTMLElement;
  private banner!: HTMLElement;
  private inlineError!: HTMLElement;
  private spinner!: HTMLElement;
  private card!: HTMLElement;
  private readout!: HTMLElement;
  private chartBox!: HTMLElement;
  private pinList!: HTMLElement;
  private pinButton!: HTMLButtonElement;

  constructor(
    readonly root: HTMLElement,
    readonly api: ApiClient,
    options: ExplorerOptions = {},
  ) {
    this.debounceMs = options.debounceMs ?? 150;
    this.setHash = options.setHash ?? ((hash) => {
      window.location.hash = hash;
    });
    this.buildDom();
  }

  /** Fetch county metadata and restore any selection from the URL hash. */
  async start(hash = ""): Promise<void> {
    let listing;
    try {
      listing = await this.api.counties();
    } catch (error) {
      this.showBanner(error);
      this.picker.disabled = true;
      this.sliderN.disabled = true;
      this.sliderB.disabled = true;
      return;
    }
    this.hideBanner();
    this.state.grid = listing.grid;
    this.state.counties = listing.counties;
    this.populatePicker();
    this.sliderN.max = String(listing.grid.levels_n - 1);
    this.sliderB.max = String(listing.grid.levels_b - 1);
    if (listing.counties.length === 0) {
      this.picker.disabled = true;
      this.sliderN.disabled = true;
      this.sliderB.disabled = true;
      this.banner.hidden = false;
      this.banner.textContent = "no counties in the fitted artifact";
      return;
    }
    const fromHash = parseHash(hash);
    this.state.levelN = fromHash.n;
    this.state.levelB = fromHash.b;
    clampLevels(this.state);
    const county =
      fromHash.county &&
      listing.counties.some((c) => c.county_id === fromHash.county)
        ? fromHash.county
        : listing.counties[0]!.county_id;
    await this.selectCounty(county);
  }

  /** Select a county: render its coefficient card and refresh predictions. */
  async selectCounty(countyId: string): Promise<void> {
    this.state.selectedCounty = countyId;
    this.picker.value = countyId;
    this.syncSliders();
    try {
      const coefficients = await this.cache.get(countyId, (id) =>
        this.api.coefficients(id),
      );
      this.renderCard(coefficients.coefficients);
      this.hideBanner();
    } catch (error) {
      this.showBanner(error);
      return;
    }
    this.setHash(formatHash(this.state));
    await this.refreshPredictions();
  }

  /** Set slider levels programmatically and refresh immediately. */
  async setLevels(n: number, b: number): Promise<void> {
    this.state.levelN = n;
    this.state.levelB = b;
    clampLevels(this.state);
    this.syncSliders();
    this.setHash(formatHash(this.state));
    await this.refreshPredictions();
  }

  /**
   * Sweep the naloxone axis at the current buprenorphine level; the readout
   * shows the response at the current slider pair.  Earlier sweeps abort.
   */
  async refreshPredictions(): Promise<void> {
    if (!this.state.selectedCounty || !this.state.grid) return;
    this.sweepController?.abort();
    const controller = new AbortController();
    this.sweepController = controller;
    const epoch = ++this.refreshEpoch;
    const county = this.state.selectedCounty;
    const levelB = this.state.levelB;
    this.spinner.hidden = false;
    this.inlineError.textContent = "";
    try {
      const sweep = await Promise.all(
        Array.from({ length: this.state.grid.levels_n }, (_, n) =>
          this.api.predict(
            { county_id: county, n, b: levelB },
            controller.signal,
          ),
        ),
      );
      if (epoch !== this.refreshEpoch) return; // superseded
      const current = sweep[this.state.levelN];
      if (current) {
        this.state.lastPrediction = current;
        this.renderReadout(current);
      }
      renderBandChart(
        this.chartBox,
        [{ label: county, points: sweep }],
        this.state.pins,
        `naloxone level (buprenorphine level ${levelB})`,
      );
      this.pinButton.disabled = false;
      this.hideBanner();
    } catch (error) {
      if (controller.signal.aborted) return;
      if (error instanceof ApiError) {
        this.inlineError.textContent = `${error.status}: ${error.message}`;
      } else {
        this.showBanner(error);
      }
    } finally {
      if (epoch === this.refreshEpoch) this.spinner.hidden = true;
    }
  }

  /** Pin the current prediction for cross-county comparison. */
  pinCurrent(): void {
    if (!this.state.lastPrediction) return;
    addPin(this.state, this.state.lastPrediction);
    this.renderPins();
    void this.refreshPredictions();
  }

  unpin(key: string): void {
    removePin(this.state, key);
    this.renderPins();
    void this.refreshPredictions();
  }

  // ------------------------------------------------------------- rendering

  private buildDom(): void {
    this.root.innerHTML = "";
    this.banner = el("div", {
      "data-testid": "banner",
      class: "banner",
      role: "alert",
    });
    this.banner.hidden = true;
    this.inlineError = el("div", {
      "data-testid": "inline-error",
      class: "inline-error",
    });
    this.spinner = el("div", { "data-testid": "spinner" }, "querying…");
    this.spinner.hidden = true;

    this.picker = el("select", { "data-testid": "county-picker" });
    this.picker.addEventListener("change", () => {
      void this.selectCounty(this.picker.value);
    });

    this.sliderN = el("input", {
      type: "range",
      min: "0",
      value: "0",
      "data-testid": "slider-n",
    });
    this.sliderB = el("input", {
      type: "range",
      min: "0",
      value: "0",
      "data-testid": "slider-b",
    });
    this.labelN = el("span", { "data-testid": "label-n" }, "0");
    this.labelB = el("span", { "data-testid": "label-b" }, "0");
    for (const [slider, label] of [
      [this.sliderN, this.labelN],
      [this.sliderB, this.labelB],
    ] as const) {
      slider.addEventListener("input", () => {
        label.textContent = slider.value; // live label, no query yet
      });
      slider.addEventListener("change", () => this.onSliderRelease());
    }

    this.card = el("div", { "data-testid": "coefficient-card" });
    this.readout = el("div", { "data-testid": "readout" });
    this.chartBox = el("div", { "data-testid": "chart" });
    this.pinList = el("ul", { "data-testid": "pin-list" });
    this.pinButton = el(
      "button",
      { "data-testid": "pin-button" },
      "pin for comparison",
    );
    this.pinButton.disabled = true;
    this.pinButton.addEventListener("click", () => this.pinCurrent());

    const controls = el("div", { class: "controls" });
    controls.append(
      el("label", {}, "county "),
      this.picker,
      el("label", {}, " naloxone "),
      this.sliderN,
      this.labelN,
      el("label", {}, " buprenorphine "),
      this.sliderB,
      this.labelB,
      this.pinButton,
    );
    this.root.append(
      this.banner,
      controls,
      this.card,
      this.spinner,
      this.inlineError,
      this.readout,
      this.chartBox,
      this.pinList,
    );
  }

  private onSliderRelease(): void {
    this.state.levelN = Number(this.sliderN.value);
    this.state.levelB = Number(this.sliderB.value);
    clampLevels(this.state);
    this.setHash(formatHash(this.state));
    if (this.debounceTimer) clearTimeout(this.debounceTimer);
    this.debounceTimer = setTimeout(() => {
      void this.refreshPredictions();
    }, this.debounceMs);
  }

  private populatePicker(): void {
    this.picker.innerHTML = "";
    for (const county of this.state.counties) {
      this.picker.append(
        el("option", { value: county.county_id }, county.county_id),
      );
    }
  }

  private syncSliders(): void {
    this.sliderN.value = String(this.state.levelN);
    this.sliderB.value = String(this.state.levelB);
    this.labelN.textContent = String(this.state.levelN);
    this.labelB.textContent = String(this.state.levelB);
  }

  private renderCard(
    coefficients: Record<string, { mean: number; ci_low: number; ci_high: number }>,
  ): void {
    this.card.innerHTML = "";
    const title = el("h3", {}, this.state.selectedCounty ?? "");
    this.card.append(title);
    for (const name of COEFFICIENT_ORDER) {
      const entry = coefficients[name];
      if (!entry) continue;
      const row = el("div", { "data-coef": name });
      row.append(
        el("span", { class: "coef-label" }, COEFFICIENT_LABELS[name] ?? name),
        el(
          "span",
          { class: "coef-value", "data-testid": `coef-${name}` },
          entry.mean.toFixed(2),
        ),
        el(
          "span",
          { class: "coef-ci", "data-testid": `coef-${name}-ci` },
          ` [${entry.ci_low.toFixed(2)}, ${entry.ci_high.toFixed(2)}]`,
        ),
      );
      this.card.append(row);
    }
  }

  private renderReadout(prediction: PredictResponse): void {
    this.readout.innerHTML = "";
    this.readout.append(
      el(
        "div",
        { "data-testid": "predicted-mean" },
        prediction.mean.toFixed(2),
      ),
      el(
        "div",
        { "data-testid": "predicted-ci" },
        `95% interval [${prediction.ci_low.toFixed(2)}, ` +
          `${prediction.ci_high.toFixed(2)}]`,
      ),
      el(
        "div",
        { class: "readout-caption" },
        `deaths per 100,000 at levels (${prediction.n}, ${prediction.b})`,
      ),
    );
  }

  private renderPins(): void {
    this.pinList.innerHTML = "";
    for (const pin of this.state.pins) {
      const key = pinKey(pin);
      const item = el("li", { "data-pin": key });
      item.append(
        el(
          "span",
          { "data-testid": `pin-value-${key}` },
          `${pin.countyId} (${pin.n},${pin.b}): ${pin.response.mean.toFixed(2)}`,
        ),
      );
      const remove = el("button", { "data-testid": `unpin-${key}` }, "✕");
      remove.addEventListener("click", () => this.unpin(key));
      item.append(remove);
      this.pinList.append(item);
    }
  }

  private showBanner(error: unknown): void {
    const message =
      error instanceof ApiError
        ? `service error ${error.status}: ${error.message}`
        : "prediction service unreachable";
    this.banner.hidden = false;
    this.banner.textContent = message;
  }

  private hideBanner(): void {
    this.banner.hidden = true;
    this.banner.textContent = "";
  }
}

export async function mountExplorer(
  root: HTMLElement,
  api: ApiClient,
  options: ExplorerOptions = {},
  hash = "",
): Promise<Explorer> {
  const explorer = new Explorer(root, api, options);
  await explorer.start(hash);
  return explorer;
}
