import { beforeEach, describe, expect, it, vi } from "vitest";

import { ApiClient } from "../src/api.js";
import { Explorer, mountExplorer } from "../src/app.js";
import { FakeService, defaultFake } from "./fakeService.js";

let fake: FakeService;

function query<T extends HTMLElement>(root: HTMLElement, testId: string): T {
  const node = root.querySelector(`[data-testid="${testId}"]`);
  if (!node) throw new Error(`missing element ${testId}`);
  return node as T;
}

async function mount(
  service: FakeService = defaultFake(),
  hash = "",
): Promise<{ explorer: Explorer; root: HTMLElement }> {
  fake = service;
  fake.install();
  const root = document.createElement("div");
  document.body.replaceChildren(root);
  const explorer = await mountExplorer(
    root,
    new ApiClient("http://fake"),
    { debounceMs: 10, setHash: () => {} },
    hash,
  );
  return { explorer, root };
}

beforeEach(() => {
  vi.restoreAllMocks();
});

describe("county picker", () => {
  it("renders the coefficient card for the selected county", async () => {
    const { root } = await mount();
    const card = query(root, "coefficient-card");
    expect(card.textContent).toContain("adams");
    expect(query(root, "coef-mu0").textContent).toBe("120.50");
    expect(query(root, "coef-mu_n").textContent).toBe("-4.25");
    expect(query(root, "coef-mu_b").textContent).toBe("-2.50");
    expect(query(root, "coef-mu0-ci").textContent).toContain("[120.00, 121.00]");
  });

  it("does not refetch coefficients when re-selecting the same county", async () => {
    const { explorer } = await mount();
    await explorer.selectCounty("berks");
    await explorer.selectCounty("adams");
    await explorer.selectCounty("berks");
    const coefficientCalls = fake.log.filter((r) =>
      r.path.startsWith("/coefficients/"),
    );
    expect(coefficientCalls).toHaveLength(2); // adams and berks only
    expect(explorer.cache.fetchCount).toBe(2);
  });

  it("disables the controls when the county list is empty", async () => {
    const { root } = await mount(new FakeService([]));
    expect(query<HTMLInputElement>(root, "slider-n").disabled).toBe(true);
    expect(query<HTMLElement>(root, "banner").hidden).toBe(false);
  });

  it("restores the selection from the URL hash", async () => {
    const { explorer } = await mount(defaultFake(), "#county=berks&n=1&b=2");
    expect(explorer.state.selectedCounty).toBe("berks");
    expect(explorer.state.levelN).toBe(1);
    expect(explorer.state.levelB).toBe(2);
  });
});

describe("slider bounds", () => {
  it("always match the grid metadata", async () => {
    const service = new FakeService(
      [{ county_id: "x", mu0: 100, mu_n: -1, mu_b: -1 }],
      { levels_n: 4, levels_b: 3 },
    );
    const { root } = await mount(service);
    expect(query<HTMLInputElement>(root, "slider-n").max).toBe("3");
    expect(query<HTMLInputElement>(root, "slider-b").max).toBe("2");
  });
});

describe("what-if queries", () => {
  it("shows the baseline coefficient at levels (0,0)", async () => {
    const { root } = await mount();
    const mean = query(root, "predicted-mean").textContent;
    const mu0 = query(root, "coef-mu0").textContent;
    expect(mean).toBe(mu0); // displayed mean equals the card's baseline
  });

  it("decreasing effect: higher naloxone level lowers the displayed mean", async () => {
    const { explorer, root } = await mount();
    const at0 = Number(query(root, "predicted-mean").textContent);
    await explorer.setLevels(3, 0);
    const at3 = Number(query(root, "predicted-mean").textContent);
    expect(at3).toBeLessThan(at0);
    expect(at3).toBeCloseTo(120.5 - 3 * 4.25, 10);
  });

  it("debounces slider release into a single sweep", async () => {
    const { root } = await mount();
    fake.log.length = 0;
    const slider = query<HTMLInputElement>(root, "slider-n");
    for (const value of ["1", "2", "3"]) {
      slider.value = value;
      slider.dispatchEvent(new Event("change"));
    }
    await new Promise((resolve) => setTimeout(resolve, 120));
    const predicts = fake.log.filter((r) => r.path === "/predict");
    expect(predicts).toHaveLength(fake.grid.levels_n); // one sweep only
  });

  it("live slider labels update without querying", async () => {
    const { root } = await mount();
    fake.log.length = 0;
    const slider = query<HTMLInputElement>(root, "slider-b");
    slider.value = "4";
    slider.dispatchEvent(new Event("input"));
    expect(query(root, "label-b").textContent).toBe("4");
    expect(fake.log.filter((r) => r.path === "/predict")).toHaveLength(0);
  });

  it("renders the band chart with one dot per level", async () => {
    const { root } = await mount();
    const dots = root.querySelectorAll(".mean-dot");
    expect(dots).toHaveLength(fake.grid.levels_n);
    const means = [...dots].map((d) => Number(d.getAttribute("data-mean")));
    for (let n = 0; n < means.length; n += 1) {
      expect(means[n]).toBeCloseTo(120.5 - 4.25 * n, 10);
    }
  });

  it("keeps only the newest in-flight sweep", async () => {
    const { explorer, root } = await mount();
    fake.latencyMs = 30;
    const slow = explorer.setLevels(1, 0);
    const fast = explorer.setLevels(2, 0);
    await Promise.all([slow, fast]);
    await new Promise((resolve) => setTimeout(resolve, 80));
    expect(Number(query(root, "predicted-mean").textContent)).toBeCloseTo(
      120.5 - 2 * 4.25,
      10,
    );
  });
});

describe("error surfaces", () => {
  it("shows the service-down banner when the list fetch fails", async () => {
    const service = defaultFake();
    service.down = true;
    const { root } = await mount(service);
    const banner = query(root, "banner");
    expect(banner.hidden).toBe(false);
    expect(banner.textContent).toContain("unreachable");
    expect(query<HTMLSelectElement>(root, "county-picker").disabled).toBe(true);
  });

  it("surfaces a 400 inline when the condition is outside the grid", async () => {
    const { explorer, root } = await mount();
    fake.grid.levels_n = 2; // shrink after load so a sweep hits 400
    await explorer.refreshPredictions();
    expect(query(root, "inline-error").textContent).toContain("400");
  });

  it("recovers after the service comes back", async () => {
    const service = defaultFake();
    service.down = true;
    const { explorer, root } = await mount(service);
    service.down = false;
    await explorer.start();
    expect(query(root, "banner").hidden).toBe(true);
    expect(query(root, "predicted-mean").textContent).toBe("120.50");
  });
});

describe("comparison pins", () => {
  it("pins two counties and shows values equal to direct API responses", async () => {
    const { explorer, root } = await mount();
    const api = new ApiClient("http://fake");

    await explorer.setLevels(4, 4);
    explorer.pinCurrent();
    await explorer.selectCounty("berks");
    await explorer.setLevels(4, 4);
    explorer.pinCurrent();

    const direct = await Promise.all([
      api.predict({ county_id: "adams", n: 4, b: 4 }),
      api.predict({ county_id: "berks", n: 4, b: 4 }),
    ]);
    const shown = [
      query(root, "pin-value-adams@4,4").textContent,
      query(root, "pin-value-berks@4,4").textContent,
    ];
    expect(shown[0]).toContain(direct[0]!.mean.toFixed(2));
    expect(shown[1]).toContain(direct[1]!.mean.toFixed(2));

    await new Promise((resolve) => setTimeout(resolve, 30));
    const pinDots = root.querySelectorAll(".pin-dot");
    expect(pinDots).toHaveLength(2); // both bands rendered on the chart
  });

  it("unpins via the remove button", async () => {
    const { explorer, root } = await mount();
    explorer.pinCurrent();
    const key = "adams@0,0";
    query<HTMLButtonElement>(root, `unpin-${key}`).click();
    expect(explorer.state.pins).toHaveLength(0);
  });
});
