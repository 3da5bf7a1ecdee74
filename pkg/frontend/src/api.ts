// Typed client for the documented HTTP endpoints. Every non-2xx response
// becomes an ApiError carrying the server's structured {code, message}.

export interface LatLon {
  lat: number;
  lon: number;
}

export interface SessionInfo {
  token: string;
  account_id: string;
  role: "Rider" | "Driver" | "Admin";
  username: string;
  car_id: string | null;
  expires_at: number;
}

export interface RoutePayload {
  polyline: LatLon[];
  distance: number;
  duration: number;
  node_path: string[];
}

export interface TrackPayload {
  ride_id: string;
  stage: string;
  pickup_status: string;
  dropoff_status: string;
  sample: { car_id: string; point: LatLon; recorded_at: number } | null;
  route: RoutePayload;
  target: string;
  route_version: number;
  reroutes: number;
  poll_interval_ms: number;
}

export interface GraphPayload {
  version: string;
  bbox: { min_lat: number; max_lat: number; min_lon: number; max_lon: number };
  nodes: { id: string; lat: number; lon: number }[];
  edges: { from: string; to: string; length_m: number; bidirectional: boolean }[];
  places: { name: string; node: string }[];
}

export interface PendingAccount {
  university_id: string;
  email: string;
  first_name: string;
  last_name: string;
  username: string;
  approval: string;
}

export class ApiError extends Error {
  constructor(
    public status: number,
    public code: string,
    message: string,
    public errors?: { field: string; message: string }[],
  ) {
    super(message);
  }
}

export class ApiClient {
  constructor(
    public baseUrl: string,
    private fetchFn: typeof fetch = fetch,
  ) {}

  token: string | null = null;

  private async request(method: string, path: string, body?: unknown): Promise<any> {
    const headers: Record<string, string> = {};
    if (body !== undefined) headers["Content-Type"] = "application/json";
    if (this.token) headers["Authorization"] = `Bearer ${this.token}`;
    const resp = await this.fetchFn(this.baseUrl + path, {
      method,
      headers,
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    let data: any = {};
    try {
      data = await resp.json();
    } catch {
      /* empty body */
    }
    if (!resp.ok) {
      throw new ApiError(
        resp.status,
        data.code ?? "error",
        data.message ?? resp.statusText,
        data.errors,
      );
    }
    return data;
  }

  register(body: {
    university_id: string;
    email: string;
    first_name: string;
    last_name: string;
    phone: string;
    password: string;
  }) {
    return this.request("POST", "/register", body);
  }

  async login(username: string, password: string): Promise<SessionInfo> {
    const session = await this.request("POST", "/login", { username, password });
    this.token = session.token;
    return session;
  }

  adminPending(): Promise<{ accounts: PendingAccount[] }> {
    return this.request("GET", "/admin/pending");
  }

  adminReview(accountId: string, decision: "accept" | "reject") {
    return this.request("POST", "/admin/review", { account_id: accountId, decision });
  }

  routePreview(from: LatLon, to: LatLon): Promise<{ route: RoutePayload; distance_m: number; duration_s: number }> {
    const q = new URLSearchParams({
      from_lat: String(from.lat),
      from_lon: String(from.lon),
      to_lat: String(to.lat),
      to_lon: String(to.lon),
    });
    return this.request("GET", `/route/preview?${q}`);
  }

  confirmRide(pickup: LatLon, dropoff: LatLon, seats: number): Promise<{
    request_id: string;
    status: string;
    position: number;
    distance_m: number;
    duration_s: number;
  }> {
    return this.request("POST", "/confirm-ride", { pickup, dropoff, seats });
  }

  acceptRide(requestId: string): Promise<{ ride_id: string; stage: string }> {
    return this.request("POST", "/accept-ride", { request_id: requestId });
  }

  rejectRide(requestId: string): Promise<{ status: string }> {
    return this.request("POST", "/reject-ride", { request_id: requestId });
  }

  postStage(rideId: string, target: string): Promise<any> {
    return this.request("POST", `/rides/${rideId}/stage`, { target });
  }

  postLocation(lat: number, lon: number, recordedAt?: number) {
    return this.request("POST", "/location", { lat, lon, recorded_at: recordedAt ?? null });
  }

  track(rideId: string): Promise<TrackPayload> {
    return this.request("GET", `/rides/${rideId}/track`);
  }

  notifications(): Promise<{ notifications: { type: string; sent_at: number; payload: any }[] }> {
    return this.request("GET", "/notifications");
  }

  graph(): Promise<GraphPayload> {
    return this.request("GET", "/graph");
  }

  config(): Promise<{ track_poll_ms: number; track_publish_ms: number; max_seats: number }> {
    return this.request("GET", "/config");
  }

  wsUrl(): string {
    const ws = this.baseUrl.replace(/^http/, "ws");
    return `${ws}/events?token=${encodeURIComponent(this.token ?? "")}`;
  }
}
