// @vitest-environment jsdom
import { beforeEach, describe, expect, it } from "vitest";
import { ApiClient, GraphPayload, TrackPayload } from "../src/api.js";
import { Console } from "../src/controller.js";
import { Ui } from "../src/views.js";

const GRAPH: GraphPayload = {
  version: "v1",
  bbox: { min_lat: 0.0, max_lat: 0.01, min_lon: 0.0, max_lon: 0.02 },
  nodes: [
    { id: "a", lat: 0.0, lon: 0.0 },
    { id: "b", lat: 0.01, lon: 0.02 },
  ],
  edges: [{ from: "a", to: "b", length_m: 2400, bidirectional: true }],
  places: [
    { name: "Library", node: "a" },
    { name: "Stadium", node: "b" },
  ],
};

const TRACK: TrackPayload = {
  ride_id: "ride-1",
  stage: "HeadToPickup",
  pickup_status: "enroute",
  dropoff_status: "pending",
  sample: { car_id: "car-1", point: { lat: 0.002, lon: 0.004 }, recorded_at: 5 },
  route: {
    polyline: [
      { lat: 0.0, lon: 0.0 },
      { lat: 0.01, lon: 0.02 },
    ],
    distance: 2400,
    duration: 480,
    node_path: ["a", "b"],
  },
  target: "pickup",
  route_version: 1,
  reroutes: 0,
  poll_interval_ms: 600000, // keep the poll timer quiet during tests
};

function makeUi() {
  const api = new ApiClient("http://test.invalid");
  api.graph = async () => GRAPH;
  api.track = async () => TRACK;
  const console_ = new Console(api);
  const root = document.createElement("main");
  document.body.replaceChildren(root);
  const ui = new Ui(document, root, console_);
  return { ui, console_, root };
}

async function settled(): Promise<void> {
  await new Promise((r) => setTimeout(r, 0));
  await new Promise((r) => setTimeout(r, 0));
}

describe("view rendering", () => {
  beforeEach(() => {
    document.body.replaceChildren();
  });

  it("renders the login view first", () => {
    const { ui, root } = makeUi();
    ui.render();
    expect(root.querySelector("#login-go")).not.toBeNull();
    expect(root.querySelector("#login-user")).not.toBeNull();
  });

  it("renders banners with a dismiss control", () => {
    const { ui, console_, root } = makeUi();
    console_.state.banners.push({ kind: "error", text: "something failed" });
    ui.render();
    const banner = root.querySelector(".banner.error")!;
    expect(banner.textContent).toContain("something failed");
    (banner.querySelector("button.dismiss") as HTMLButtonElement).click();
    expect(root.querySelector(".banner.error")).toBeNull();
  });

  it("renders the pin view with map and place search", async () => {
    const { ui, console_, root } = makeUi();
    console_.state.session = {
      token: "t", account_id: "u", role: "Rider", username: "u.x", car_id: null, expires_at: 0,
    };
    console_.state.view = "PinDropoff";
    ui.render();
    await settled();
    expect(root.querySelector("svg.map")).not.toBeNull();
    expect(root.querySelectorAll("line.road")).toHaveLength(1);
    let search = root.querySelector("#place-search") as HTMLInputElement;
    search.value = "libr";
    search.dispatchEvent(new window.Event("input"));
    const hits = root.querySelectorAll("#place-results button");
    expect(hits).toHaveLength(1);
    expect(hits[0]!.textContent).toBe("Library");
    (hits[0] as HTMLButtonElement).click();
    expect(console_.state.pins.dropoff).toEqual({ lat: 0.0, lon: 0.0 });
    await settled(); // pinning re-renders; grab the fresh search box
    search = root.querySelector("#place-search") as HTMLInputElement;
    search.value = "nowhere";
    search.dispatchEvent(new window.Event("input"));
    expect(root.querySelector("#place-results .empty")).not.toBeNull();
  });

  it("renders driver offers with accept and reject, stale cards disabled", () => {
    const { ui, console_, root } = makeUi();
    console_.state.session = {
      token: "t", account_id: "car-x", role: "Driver", username: "car-1",
      car_id: "car-1", expires_at: 0,
    };
    console_.state.view = "DriverDashboard";
    console_.state.offers = [
      { request_id: "r1", pickup: { lat: 0, lon: 0 }, dropoff: { lat: 0, lon: 1 }, seats: 2, stale: false },
      { request_id: "r2", pickup: { lat: 0, lon: 0 }, dropoff: { lat: 0, lon: 1 }, seats: 1, stale: true },
    ];
    ui.render();
    const cards = root.querySelectorAll("#offer-list .offer");
    expect(cards).toHaveLength(2);
    expect(cards[1]!.classList.contains("stale")).toBe(true);
    const staleButtons = cards[1]!.querySelectorAll("button");
    expect([...staleButtons].every((b) => (b as HTMLButtonElement).disabled)).toBe(true);
  });

  it("gates the stage buttons to the single legal successor", async () => {
    const { ui, console_, root } = makeUi();
    console_.state.session = {
      token: "t", account_id: "car-x", role: "Driver", username: "car-1",
      car_id: "car-1", expires_at: 0,
    };
    console_.state.view = "Tracking";
    console_.state.rideId = "ride-1";
    console_.state.track = TRACK;
    ui.render();
    await settled();
    const buttons = [...root.querySelectorAll("button.stage")] as HTMLButtonElement[];
    expect(buttons.map((b) => b.id)).toEqual([
      "stage-HeadToPickup", "stage-IHaveArrived", "stage-StartRide", "stage-EndRide",
    ]);
    expect(buttons.filter((b) => !b.disabled).map((b) => b.id)).toEqual(["stage-IHaveArrived"]);
    expect(root.querySelector("#track-status")!.textContent).toContain("pickup enroute");
    // the route polyline and the car marker come straight from the response
    const route = root.querySelector("polyline.route")!;
    expect(route.getAttribute("points")!.split(" ")).toHaveLength(2);
    expect(root.querySelector("circle.car")!.getAttribute("visibility")).toBe("visible");
  });

  it("renders the admin pending list with an empty state", () => {
    const { ui, console_, root } = makeUi();
    console_.state.session = {
      token: "t", account_id: "admin-root", role: "Admin", username: "root",
      car_id: null, expires_at: 0,
    };
    console_.state.view = "AdminReview";
    ui.render();
    expect(root.querySelector("#pending-list .empty")).not.toBeNull();
    console_.pending = [{ university_id: "49-1", username: "a.b", email: "a@uni.example" }];
    ui.render();
    expect(root.querySelectorAll("#pending-list .offer")).toHaveLength(1);
  });
});
