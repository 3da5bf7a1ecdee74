// Console state and its pure transition rules.
//
// The console never invents domain state: stages, statuses, routes, and
// markers are always taken verbatim from server responses or envelopes.
// View navigation mirrors the product flows: Waiting moves to Tracking only
// on a ride-accepted event, and back to the dashboard on rejection.

import { Envelope } from "./frames.js";
import { LatLon, SessionInfo, TrackPayload } from "./api.js";

export type View =
  | "Register"
  | "Pending"
  | "Login"
  | "RiderDashboard"
  | "PinDropoff"
  | "PinPickup"
  | "Seats"
  | "Confirm"
  | "Waiting"
  | "Tracking"
  | "DriverDashboard"
  | "AdminReview";

export interface Banner {
  kind: "info" | "error";
  text: string;
}

export interface OfferCard {
  request_id: string;
  pickup: LatLon;
  dropoff: LatLon;
  seats: number;
  stale: boolean;
}

export interface ConsoleState {
  view: View;
  session: SessionInfo | null;
  banners: Banner[];
  notifications: Envelope[];
  pins: { pickup: LatLon | null; dropoff: LatLon | null };
  seats: number;
  preview: { distance_m: number; duration_s: number; polyline: LatLon[] } | null;
  requestId: string | null;
  rideId: string | null;
  track: TrackPayload | null;
  offers: OfferCard[];
}

export function initialState(): ConsoleState {
  return {
    view: "Login",
    session: null,
    banners: [],
    notifications: [],
    pins: { pickup: null, dropoff: null },
    seats: 1,
    preview: null,
    requestId: null,
    rideId: null,
    track: null,
    offers: [],
  };
}

export function pushBanner(state: ConsoleState, kind: Banner["kind"], text: string): void {
  state.banners.push({ kind, text });
}

export function dismissBanner(state: ConsoleState, index: number): void {
  state.banners.splice(index, 1);
}

export function dashboardFor(role: SessionInfo["role"]): View {
  if (role === "Admin") return "AdminReview";
  if (role === "Driver") return "DriverDashboard";
  return "RiderDashboard";
}

export function onLoggedIn(state: ConsoleState, session: SessionInfo): void {
  state.session = session;
  state.view = dashboardFor(session.role);
}

// The single legal next stage per current stage; the driver's button row.
export const STAGE_BUTTONS = ["HeadToPickup", "IHaveArrived", "StartRide", "EndRide"] as const;

const NEXT_STAGE: Record<string, string | null> = {
  StartJourney: "HeadToPickup",
  HeadToPickup: "IHaveArrived",
  IHaveArrived: "StartRide",
  StartRide: "EndRide",
  EndRide: null,
  Finished: null,
};

export function enabledStageButton(stage: string): string | null {
  return NEXT_STAGE[stage] ?? null;
}

export function stageButtonStates(stage: string): { label: string; enabled: boolean }[] {
  const next = enabledStageButton(stage);
  return STAGE_BUTTONS.map((label) => ({ label, enabled: label === next }));
}

// -- event handling -----------------------------------------------------------

export function onEnvelope(state: ConsoleState, envelope: Envelope): void {
  state.notifications.push(envelope);
  const role = state.session?.role;
  if (role === "Driver") {
    onDriverEnvelope(state, envelope);
  } else {
    onRiderEnvelope(state, envelope);
  }
}

function onRiderEnvelope(state: ConsoleState, envelope: Envelope): void {
  switch (envelope.type) {
    case "ride-accepted": {
      state.rideId = (envelope.payload.ride_id as string) ?? envelope.ride_id ?? null;
      pushBanner(state, "info", "A car accepted your request. OK to open tracking.");
      if (state.view === "Waiting") {
        state.view = "Tracking";
      }
      break;
    }
    case "ride-rejected": {
      pushBanner(state, "error", "Your request was rejected; please try again later.");
      if (state.view === "Waiting") {
        state.view = "RiderDashboard";
        state.requestId = null;
      }
      break;
    }
    case "no-cars-available": {
      pushBanner(state, "error", "No cars are available right now; please try again later.");
      if (state.view === "Waiting") {
        state.view = "RiderDashboard";
        state.requestId = null;
      }
      break;
    }
    case "driver-arrived": {
      pushBanner(state, "info", "Your driver has arrived at the pickup point.");
      break;
    }
    case "ride-ended": {
      pushBanner(state, "info", "You have arrived at the drop-off point.");
      break;
    }
  }
}

function onDriverEnvelope(state: ConsoleState, envelope: Envelope): void {
  switch (envelope.type) {
    case "ride-request": {
      const p = envelope.payload as any;
      state.offers.push({
        request_id: p.request_id,
        pickup: p.pickup,
        dropoff: p.dropoff,
        seats: p.seats,
        stale: false,
      });
      break;
    }
    case "ride-rejected": {
      // the offer was resolved elsewhere; drop the stale card
      const id = (envelope.payload as any).request_id;
      state.offers = state.offers.filter((o) => o.request_id !== id);
      break;
    }
  }
}

// -- rider flow navigation -----------------------------------------------------

export function startWhereTo(state: ConsoleState): void {
  state.pins = { pickup: null, dropoff: null };
  state.preview = null;
  state.view = "PinDropoff";
}

export function pinDropoff(state: ConsoleState, point: LatLon): void {
  state.pins.dropoff = point;
}

export function confirmDropoff(state: ConsoleState): void {
  if (!state.pins.dropoff) throw new Error("no drop-off pinned");
  state.view = "PinPickup";
}

export function pinPickup(state: ConsoleState, point: LatLon): void {
  state.pins.pickup = point;
}

export function confirmPickup(state: ConsoleState): void {
  if (!state.pins.pickup) throw new Error("no pickup pinned");
  state.view = "Seats";
}

export function setSeats(state: ConsoleState, seats: number): void {
  state.seats = seats;
}

export function confirmSeats(state: ConsoleState): void {
  state.view = "Confirm";
}

export function onRequestQueued(state: ConsoleState, requestId: string): void {
  state.requestId = requestId;
  state.view = "Waiting";
}

export function backToDashboard(state: ConsoleState): void {
  state.view = dashboardFor(state.session?.role ?? "Rider");
  state.track = null;
}

export function onTrack(state: ConsoleState, track: TrackPayload): void {
  state.track = track;
}

export function onRideFinished(state: ConsoleState): void {
  state.rideId = null;
  state.track = null;
  state.view = dashboardFor(state.session?.role ?? "Rider");
}
