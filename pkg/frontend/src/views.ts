// DOM rendering. One render pass per state change; views are plain
// functions from state to elements, wired back to controller methods.

import { Console } from "./controller.js";
import { GraphPayload, LatLon } from "./api.js";
import { MapElements, drawRoute, placePin, renderMap } from "./map.js";
import { STAGE_BUTTONS } from "./state.js";

function el<K extends keyof HTMLElementTagNameMap>(
  doc: Document,
  tag: K,
  attrs: Record<string, string> = {},
  text = "",
): HTMLElementTagNameMap[K] {
  const node = doc.createElement(tag);
  for (const [k, v] of Object.entries(attrs)) node.setAttribute(k, v);
  if (text) node.textContent = text;
  return node;
}

export class Ui {
  private map: MapElements | null = null;
  private graph: GraphPayload | null = null;
  private pollTimer: ReturnType<typeof setInterval> | null = null;
  private renderGen = 0;

  constructor(
    private doc: Document,
    private root: HTMLElement,
    private console_: Console,
  ) {
    console_.onChange = () => this.render();
  }

  async start(): Promise<void> {
    this.render();
  }

  private async ensureGraph(): Promise<void> {
    if (!this.graph) {
      this.graph = await this.console_.api.graph();
      this.map = null;
    }
  }

  private mapElements(onClick?: (p: LatLon) => void): MapElements {
    if (!this.map && this.graph) {
      this.map = renderMap(this.doc, this.graph);
    }
    if (!this.map) throw new Error("graph not loaded");
    this.map.svg.onclick = (ev: MouseEvent) => {
      if (!onClick || !this.map) return;
      const rect = (this.map.svg as any).getBoundingClientRect();
      const x = ((ev.clientX - rect.left) / rect.width) * 640;
      const y = ((ev.clientY - rect.top) / rect.height) * 480;
      onClick(this.map.proj.toLatLon(x, y));
    };
    return this.map;
  }

  render(): void {
    const state = this.console_.state;
    const gen = ++this.renderGen; // stale async renders must not append
    this.root.replaceChildren();
    this.root.appendChild(this.banners());
    switch (state.view) {
      case "Login":
        this.root.appendChild(this.loginView());
        break;
      case "Register":
        this.root.appendChild(this.registerView());
        break;
      case "Pending":
        this.root.appendChild(this.pendingView());
        break;
      case "RiderDashboard":
        this.root.appendChild(this.riderDashboard());
        break;
      case "PinDropoff":
      case "PinPickup":
        void this.pinView(state.view === "PinDropoff" ? "dropoff" : "pickup", gen);
        break;
      case "Seats":
        this.root.appendChild(this.seatsView());
        break;
      case "Confirm":
        void this.confirmView(gen);
        break;
      case "Waiting":
        this.root.appendChild(this.waitingView());
        break;
      case "Tracking":
        void this.trackingView(gen);
        break;
      case "DriverDashboard":
        this.root.appendChild(this.driverDashboard());
        break;
      case "AdminReview":
        this.root.appendChild(this.adminView());
        break;
    }
    this.managePolling();
  }

  private managePolling(): void {
    const state = this.console_.state;
    const needPoll = state.view === "Tracking" && state.rideId;
    if (needPoll && this.pollTimer === null) {
      const interval = state.track?.poll_interval_ms ?? 2000;
      this.pollTimer = setInterval(() => void this.console_.pollTrack(), interval);
      void this.console_.pollTrack();
    } else if (!needPoll && this.pollTimer !== null) {
      clearInterval(this.pollTimer);
      this.pollTimer = null;
    }
  }

  private banners(): HTMLElement {
    const wrap = el(this.doc, "div", { class: "banners" });
    this.console_.state.banners.forEach((banner, i) => {
      const div = el(this.doc, "div", { class: `banner ${banner.kind}` }, banner.text);
      const btn = el(this.doc, "button", { class: "dismiss" }, "OK");
      btn.onclick = () => {
        this.console_.state.banners.splice(i, 1);
        this.render();
      };
      div.appendChild(btn);
      wrap.appendChild(div);
    });
    return wrap;
  }

  private loginView(): HTMLElement {
    const box = el(this.doc, "div", { class: "card" });
    box.appendChild(el(this.doc, "h2", {}, "Sign in"));
    const user = el(this.doc, "input", { placeholder: "username", id: "login-user" });
    const pass = el(this.doc, "input", { placeholder: "password", type: "password", id: "login-pass" });
    const go = el(this.doc, "button", { id: "login-go" }, "Login");
    go.onclick = () => void this.console_.login(user.value, pass.value);
    const reg = el(this.doc, "button", { class: "link" }, "Create an account");
    reg.onclick = () => {
      this.console_.state.view = "Register";
      this.render();
    };
    box.append(user, pass, go, reg);
    return box;
  }

  private registerView(): HTMLElement {
    const box = el(this.doc, "div", { class: "card" });
    box.appendChild(el(this.doc, "h2", {}, "Register"));
    const fields: [string, string][] = [
      ["university_id", "university id"],
      ["email", "email"],
      ["first_name", "first name"],
      ["last_name", "last name"],
      ["phone", "phone"],
      ["password", "password (6+ characters)"],
    ];
    const inputs = new Map<string, HTMLInputElement>();
    for (const [name, label] of fields) {
      const input = el(this.doc, "input", {
        placeholder: label,
        id: `reg-${name}`,
        type: name === "password" ? "password" : "text",
      });
      inputs.set(name, input);
      box.appendChild(input);
    }
    const go = el(this.doc, "button", { id: "reg-go" }, "Register");
    go.onclick = () =>
      void this.console_.register({
        university_id: inputs.get("university_id")!.value,
        email: inputs.get("email")!.value,
        first_name: inputs.get("first_name")!.value,
        last_name: inputs.get("last_name")!.value,
        phone: inputs.get("phone")!.value,
        password: inputs.get("password")!.value,
      });
    const back = el(this.doc, "button", { class: "link" }, "Back to login");
    back.onclick = () => {
      this.console_.state.view = "Login";
      this.render();
    };
    box.append(go, back);
    return box;
  }

  private pendingView(): HTMLElement {
    const box = el(this.doc, "div", { class: "card" });
    box.appendChild(el(this.doc, "h2", {}, "Registration pending"));
    box.appendChild(
      el(this.doc, "p", {}, "An admin is reviewing your credentials. You will receive an email."),
    );
    const back = el(this.doc, "button", { class: "link" }, "Back to login");
    back.onclick = () => {
      this.console_.state.view = "Login";
      this.render();
    };
    box.appendChild(back);
    return box;
  }

  private riderDashboard(): HTMLElement {
    const box = el(this.doc, "div", { class: "card" });
    box.appendChild(el(this.doc, "h2", {}, `Hello, ${this.console_.state.session?.username}`));
    const where = el(this.doc, "button", { id: "where-to", class: "primary" }, "Where to?");
    where.onclick = () => this.console_.whereTo();
    box.appendChild(where);
    const log = el(this.doc, "div", { class: "list", id: "notification-log" });
    log.appendChild(el(this.doc, "h3", {}, "Notifications"));
    for (const envelope of this.console_.state.notifications) {
      log.appendChild(el(this.doc, "div", { class: "note" }, envelope.type));
    }
    box.appendChild(log);
    return box;
  }

  private async pinView(which: "pickup" | "dropoff", gen: number): Promise<void> {
    await this.ensureGraph();
    if (gen !== this.renderGen) return;
    const state = this.console_.state;
    const box = el(this.doc, "div", { class: "card wide" });
    box.appendChild(
      el(this.doc, "h2", {}, which === "dropoff" ? "Pin your drop-off" : "Pin your pickup"),
    );
    const map = this.mapElements((p) => {
      if (which === "dropoff") this.console_.pinDropoff(p);
      else this.console_.pinPickup(p);
    });
    box.appendChild(map.svg as unknown as HTMLElement);
    placePin(map.pickupPin, map.proj, state.pins.pickup);
    placePin(map.dropoffPin, map.proj, state.pins.dropoff);
    drawRoute(map.route, map.proj, null);

    const search = el(this.doc, "input", { placeholder: "search for a place", id: "place-search" });
    const results = el(this.doc, "div", { class: "list", id: "place-results" });
    search.oninput = () => {
      results.replaceChildren();
      const q = search.value.toLowerCase().trim();
      if (!q || !this.graph) return;
      const hits = this.graph.places.filter((p) => p.name.toLowerCase().includes(q));
      if (!hits.length) {
        results.appendChild(el(this.doc, "div", { class: "note empty" }, "no places match"));
        return;
      }
      for (const hit of hits) {
        const row = el(this.doc, "button", { class: "link" }, hit.name);
        row.onclick = () => {
          const node = this.graph!.nodes.find((n) => n.id === hit.node)!;
          const point = { lat: node.lat, lon: node.lon };
          if (which === "dropoff") this.console_.pinDropoff(point);
          else this.console_.pinPickup(point);
        };
        results.appendChild(row);
      }
    };
    box.append(search, results);

    if (which === "pickup") {
      const here = el(this.doc, "button", {}, "Use current location");
      here.onclick = () => {
        const nav = (globalThis as any).navigator;
        nav?.geolocation?.getCurrentPosition((pos: any) =>
          this.console_.pinPickup({ lat: pos.coords.latitude, lon: pos.coords.longitude }),
        );
      };
      box.appendChild(here);
    }

    const confirm = el(this.doc, "button", { id: "pin-confirm", class: "primary" }, "Confirm");
    confirm.onclick = () => {
      const pin = which === "dropoff" ? state.pins.dropoff : state.pins.pickup;
      if (!pin) return;
      const ok = (globalThis as any).confirm?.(`Confirm ${which} at ${pin.lat.toFixed(5)}, ${pin.lon.toFixed(5)}?`) ?? true;
      if (!ok) return;
      if (which === "dropoff") this.console_.confirmDropoff();
      else this.console_.confirmPickup();
    };
    box.appendChild(confirm);
    this.root.appendChild(box);
  }

  private seatsView(): HTMLElement {
    const box = el(this.doc, "div", { class: "card" });
    box.appendChild(el(this.doc, "h2", {}, "How many seats?"));
    const input = el(this.doc, "input", { type: "number", min: "1", max: "4", value: String(this.console_.state.seats), id: "seats" });
    const go = el(this.doc, "button", { id: "seats-save", class: "primary" }, "Save number of seats");
    go.onclick = () => {
      const n = parseInt(input.value, 10);
      const ok = (globalThis as any).confirm?.(`Need ${n} seat(s)?`) ?? true;
      if (!ok) return;
      this.console_.setSeats(n);
      void this.console_.openConfirm();
    };
    box.append(input, go);
    return box;
  }

  private async confirmView(gen: number): Promise<void> {
    await this.ensureGraph();
    if (gen !== this.renderGen) return;
    const state = this.console_.state;
    const box = el(this.doc, "div", { class: "card wide" });
    box.appendChild(el(this.doc, "h2", {}, "Review your request"));
    const map = this.mapElements();
    box.appendChild(map.svg as unknown as HTMLElement);
    placePin(map.pickupPin, map.proj, state.pins.pickup);
    placePin(map.dropoffPin, map.proj, state.pins.dropoff);
    drawRoute(map.route, map.proj, state.preview?.polyline ?? null);
    if (state.preview) {
      box.appendChild(
        el(
          this.doc,
          "p",
          { id: "preview-figures" },
          `Distance ${(state.preview.distance_m / 1000).toFixed(2)} km, about ${Math.ceil(state.preview.duration_s / 60)} min, ${state.seats} seat(s)`,
        ),
      );
    }
    const go = el(this.doc, "button", { id: "confirm-request", class: "primary" }, "Confirm request");
    go.onclick = () => void this.console_.confirmRequest();
    box.appendChild(go);
    this.root.appendChild(box);
  }

  private waitingView(): HTMLElement {
    const box = el(this.doc, "div", { class: "card" });
    box.appendChild(el(this.doc, "h2", {}, "Waiting for a car"));
    box.appendChild(el(this.doc, "p", {}, "Your request was sent to the available cars."));
    box.appendChild(el(this.doc, "div", { class: "spinner" }));
    return box;
  }

  private async trackingView(gen: number): Promise<void> {
    await this.ensureGraph();
    if (gen !== this.renderGen) return;
    const state = this.console_.state;
    const box = el(this.doc, "div", { class: "card wide" });
    const role = state.session?.role;
    box.appendChild(el(this.doc, "h2", {}, "Live tracking"));
    const map = this.mapElements();
    box.appendChild(map.svg as unknown as HTMLElement);
    const track = state.track;
    placePin(map.pickupPin, map.proj, state.pins.pickup);
    placePin(map.dropoffPin, map.proj, state.pins.dropoff);
    drawRoute(map.route, map.proj, track?.route.polyline ?? null);
    placePin(map.car, map.proj, track?.sample?.point ?? null);
    if (track) {
      box.appendChild(
        el(
          this.doc,
          "p",
          { id: "track-status" },
          `stage ${track.stage}; pickup ${track.pickup_status}; drop-off ${track.dropoff_status}`,
        ),
      );
    }
    if (role === "Driver") {
      const row = el(this.doc, "div", { class: "stage-row" });
      for (const { label, enabled } of this.console_.stageButtons()) {
        const btn = el(this.doc, "button", { id: `stage-${label}`, class: "stage" }, label);
        btn.disabled = !enabled;
        btn.onclick = () => {
          btn.disabled = true; // no double taps
          void this.console_.tapStage(label);
        };
        row.appendChild(btn);
      }
      box.appendChild(row);
    }
    this.root.appendChild(box);
  }

  private driverDashboard(): HTMLElement {
    const state = this.console_.state;
    const box = el(this.doc, "div", { class: "card" });
    box.appendChild(el(this.doc, "h2", {}, `Car ${state.session?.car_id}`));
    box.appendChild(el(this.doc, "h3", {}, "Incoming requests"));
    const list = el(this.doc, "div", { class: "list", id: "offer-list" });
    if (!state.offers.length) {
      list.appendChild(el(this.doc, "div", { class: "note empty" }, "no requests right now"));
    }
    for (const offer of state.offers) {
      const card = el(this.doc, "div", { class: `offer${offer.stale ? " stale" : ""}` });
      card.appendChild(
        el(this.doc, "p", {}, `Request ${offer.request_id}: ${offer.seats} seat(s) requested`),
      );
      const accept = el(this.doc, "button", { class: "primary" }, "Accept");
      accept.disabled = offer.stale;
      accept.onclick = () => void this.console_.acceptOffer(offer.request_id);
      const reject = el(this.doc, "button", {}, "Reject");
      reject.disabled = offer.stale;
      reject.onclick = () => void this.console_.rejectOffer(offer.request_id);
      card.append(accept, reject);
      list.appendChild(card);
    }
    box.appendChild(list);
    return box;
  }

  private adminView(): HTMLElement {
    const box = el(this.doc, "div", { class: "card" });
    box.appendChild(el(this.doc, "h2", {}, "Pending registrations"));
    const list = el(this.doc, "div", { class: "list", id: "pending-list" });
    if (!this.console_.pending.length) {
      list.appendChild(el(this.doc, "div", { class: "note empty" }, "nothing awaiting review"));
    }
    for (const account of this.console_.pending) {
      const row = el(this.doc, "div", { class: "offer" });
      row.appendChild(el(this.doc, "p", {}, `${account.university_id} (${account.email})`));
      const ok = el(this.doc, "button", { class: "primary" }, "Accept");
      ok.onclick = () => {
        if ((globalThis as any).confirm?.(`Approve ${account.university_id}?`) ?? true)
          void this.console_.review(account.university_id, "accept");
      };
      const no = el(this.doc, "button", {}, "Reject");
      no.onclick = () => {
        if ((globalThis as any).confirm?.(`Reject ${account.university_id}?`) ?? true)
          void this.console_.review(account.university_id, "reject");
      };
      row.append(ok, no);
      list.appendChild(row);
    }
    const refresh = el(this.doc, "button", { class: "link" }, "Refresh");
    refresh.onclick = () => void this.console_.loadPending();
    box.append(list, refresh);
    return box;
  }
}
