// Orchestration between the API client, the event socket, and console
// state. The DOM layer and the node e2e test drive exactly this code.

import { ApiClient, ApiError, LatLon, SessionInfo } from "./api.js";
import { Envelope } from "./frames.js";
import { EventsSocket, WebSocketCtor } from "./socket.js";
import * as st from "./state.js";

export class Console {
  state: st.ConsoleState = st.initialState();
  socket: EventsSocket | null = null;
  onChange: () => void = () => {};

  constructor(
    public api: ApiClient,
    private wsCtor?: WebSocketCtor,
  ) {}

  private changed(): void {
    this.onChange();
  }

  private fail(err: unknown): void {
    if (err instanceof ApiError) {
      const fields = err.errors?.map((e) => `${e.field}: ${e.message}`).join("; ");
      st.pushBanner(this.state, "error", fields ? `${err.message} (${fields})` : err.message);
    } else {
      st.pushBanner(this.state, "error", String(err));
    }
    this.changed();
  }

  // -- session ---------------------------------------------------------------

  async register(body: {
    university_id: string;
    email: string;
    first_name: string;
    last_name: string;
    phone: string;
    password: string;
  }): Promise<boolean> {
    try {
      const created = await this.api.register(body);
      st.pushBanner(this.state, "info", `Registered as ${created.username}; awaiting review.`);
      this.state.view = "Pending";
      this.changed();
      return true;
    } catch (err) {
      this.fail(err);
      return false;
    }
  }

  async login(username: string, password: string): Promise<SessionInfo | null> {
    try {
      const session = await this.api.login(username, password);
      st.onLoggedIn(this.state, session);
      await this.connectEvents();
      this.changed();
      return session;
    } catch (err) {
      if (err instanceof ApiError && err.code === "not_yet_approved") {
        this.state.view = "Pending";
        st.pushBanner(this.state, "info", "Registration still pending admin review.");
        this.changed();
        return null;
      }
      this.fail(err);
      return null;
    }
  }

  async connectEvents(): Promise<void> {
    this.socket = new EventsSocket(this.api.wsUrl(), this.wsCtor);
    this.socket.onEnvelope = (envelope: Envelope) => {
      st.onEnvelope(this.state, envelope);
      this.changed();
    };
    await this.socket.ready();
  }

  // -- rider flow ---------------------------------------------------------------

  whereTo(): void {
    st.startWhereTo(this.state);
    this.changed();
  }

  pinDropoff(point: LatLon): void {
    st.pinDropoff(this.state, point);
    this.changed();
  }

  confirmDropoff(): void {
    st.confirmDropoff(this.state);
    this.changed();
  }

  pinPickup(point: LatLon): void {
    st.pinPickup(this.state, point);
    this.changed();
  }

  confirmPickup(): void {
    st.confirmPickup(this.state);
    this.changed();
  }

  setSeats(n: number): void {
    st.setSeats(this.state, n);
    this.changed();
  }

  async openConfirm(): Promise<void> {
    st.confirmSeats(this.state);
    const { pickup, dropoff } = this.state.pins;
    if (pickup && dropoff) {
      try {
        const preview = await this.api.routePreview(pickup, dropoff);
        this.state.preview = {
          distance_m: preview.distance_m,
          duration_s: preview.duration_s,
          polyline: preview.route.polyline,
        };
      } catch (err) {
        this.fail(err);
      }
    }
    this.changed();
  }

  async confirmRequest(): Promise<boolean> {
    const { pickup, dropoff } = this.state.pins;
    if (!pickup || !dropoff) {
      st.pushBanner(this.state, "error", "pin both locations first");
      this.changed();
      return false;
    }
    try {
      const queued = await this.api.confirmRide(pickup, dropoff, this.state.seats);
      st.onRequestQueued(this.state, queued.request_id);
      this.changed();
      return true;
    } catch (err) {
      this.fail(err);
      return false;
    }
  }

  async pollTrack(): Promise<void> {
    if (!this.state.rideId) return;
    try {
      const track = await this.api.track(this.state.rideId);
      st.onTrack(this.state, track);
      this.changed();
    } catch (err) {
      if (err instanceof ApiError && err.status === 410) {
        st.onRideFinished(this.state);
        this.changed();
        return;
      }
      this.fail(err);
    }
  }

  // -- driver flow ----------------------------------------------------------------

  async acceptOffer(requestId: string): Promise<boolean> {
    try {
      const ride = await this.api.acceptRide(requestId);
      this.state.offers = this.state.offers.filter((o) => o.request_id !== requestId);
      this.state.rideId = ride.ride_id;
      this.state.view = "Tracking";
      this.changed();
      return true;
    } catch (err) {
      // a rival claim: grey out the stale card instead of dropping silently
      if (err instanceof ApiError && err.status === 409) {
        const card = this.state.offers.find((o) => o.request_id === requestId);
        if (card) card.stale = true;
      }
      this.fail(err);
      return false;
    }
  }

  async rejectOffer(requestId: string): Promise<void> {
    try {
      await this.api.rejectRide(requestId);
      this.state.offers = this.state.offers.filter((o) => o.request_id !== requestId);
      this.changed();
    } catch (err) {
      this.fail(err);
    }
  }

  stageButtons(): { label: string; enabled: boolean }[] {
    const stage = this.state.track?.stage ?? "StartJourney";
    return st.stageButtonStates(stage);
  }

  async tapStage(target: string): Promise<void> {
    if (!this.state.rideId) return;
    // gate on the server-rendered stage: only the legal successor is tappable
    const allowed = st.enabledStageButton(this.state.track?.stage ?? "StartJourney");
    if (target !== allowed) {
      st.pushBanner(this.state, "error", `stage ${target} is not available yet`);
      this.changed();
      return;
    }
    try {
      const ride = await this.api.postStage(this.state.rideId, target);
      if (ride.stage === "Finished") {
        st.onRideFinished(this.state); // back to the car dashboard
      } else {
        await this.pollTrack();
      }
      this.changed();
    } catch (err) {
      this.fail(err);
    }
  }

  async publishPosition(lat: number, lon: number, recordedAt: number): Promise<void> {
    this.socket?.sendLocation(lat, lon, recordedAt);
  }

  // -- admin flow ------------------------------------------------------------------

  pending: { university_id: string; username: string; email: string }[] = [];

  async loadPending(): Promise<void> {
    try {
      const result = await this.api.adminPending();
      this.pending = result.accounts;
      this.changed();
    } catch (err) {
      this.fail(err);
    }
  }

  async review(accountId: string, decision: "accept" | "reject"): Promise<void> {
    try {
      await this.api.adminReview(accountId, decision);
      this.pending = this.pending.filter((a) => a.university_id !== accountId);
      st.pushBanner(this.state, "info", `${accountId} ${decision}ed`);
      this.changed();
    } catch (err) {
      this.fail(err);
    }
  }

  close(): void {
    this.socket?.close();
  }
}
