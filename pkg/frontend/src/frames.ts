// Wire frame codec: 4-byte big-endian length + UTF-8 JSON with canonical
// (sorted-key, compact) encoding, matching the service byte for byte.

export const EVENT_TYPES = new Set([
  "ride-request",
  "ride-accepted",
  "ride-rejected",
  "driver-arrived",
  "ride-ended",
  "location-update",
  "no-cars-available",
]);

export interface Envelope {
  type: string;
  seq: number;
  sent_at: number;
  ride_id?: string | null;
  to?: string | null;
  payload: Record<string, unknown>;
}

export class MalformedFrame extends Error {}

function canonicalJson(value: unknown): string {
  if (value === null || typeof value === "number" || typeof value === "boolean") {
    return JSON.stringify(value);
  }
  if (typeof value === "string") {
    return JSON.stringify(value);
  }
  if (Array.isArray(value)) {
    return "[" + value.map(canonicalJson).join(",") + "]";
  }
  const obj = value as Record<string, unknown>;
  const keys = Object.keys(obj).sort();
  const parts = keys.map((k) => JSON.stringify(k) + ":" + canonicalJson(obj[k]));
  return "{" + parts.join(",") + "}";
}

export function encodeFrame(envelope: Envelope): Uint8Array {
  if (!EVENT_TYPES.has(envelope.type)) {
    throw new MalformedFrame(`unknown event type ${envelope.type}`);
  }
  const body: Record<string, unknown> = {
    type: envelope.type,
    seq: envelope.seq,
    sent_at: envelope.sent_at,
    payload: envelope.payload ?? {},
  };
  if (envelope.ride_id !== undefined && envelope.ride_id !== null) {
    body.ride_id = envelope.ride_id;
  }
  if (envelope.to !== undefined && envelope.to !== null) {
    body.to = envelope.to;
  }
  const data = new TextEncoder().encode(canonicalJson(body));
  const frame = new Uint8Array(4 + data.length);
  new DataView(frame.buffer).setUint32(0, data.length, false);
  frame.set(data, 4);
  return frame;
}

export function decodeFrame(bytes: Uint8Array): Envelope {
  if (bytes.length < 4) {
    throw new MalformedFrame("frame shorter than length prefix");
  }
  const declared = new DataView(bytes.buffer, bytes.byteOffset, bytes.byteLength).getUint32(0, false);
  if (bytes.length - 4 !== declared) {
    throw new MalformedFrame(`frame length ${bytes.length - 4} != declared ${declared}`);
  }
  let body: unknown;
  try {
    body = JSON.parse(new TextDecoder("utf-8", { fatal: true }).decode(bytes.subarray(4)));
  } catch (err) {
    throw new MalformedFrame(`frame body is not UTF-8 JSON: ${err}`);
  }
  if (typeof body !== "object" || body === null || Array.isArray(body)) {
    throw new MalformedFrame("frame body must be a JSON object");
  }
  const obj = body as Record<string, unknown>;
  for (const key of ["type", "seq", "sent_at"]) {
    if (!(key in obj)) {
      throw new MalformedFrame(`missing required key ${key}`);
    }
  }
  if (typeof obj.type !== "string" || !EVENT_TYPES.has(obj.type)) {
    throw new MalformedFrame(`unknown event type ${obj.type}`);
  }
  if (typeof obj.seq !== "number" || !Number.isInteger(obj.seq)) {
    throw new MalformedFrame("seq must be an integer");
  }
  if (typeof obj.sent_at !== "number") {
    throw new MalformedFrame("sent_at must be a number");
  }
  const rideId = obj.ride_id ?? null;
  if (rideId !== null && typeof rideId !== "string") {
    throw new MalformedFrame("ride_id must be a string");
  }
  const to = obj.to ?? null;
  if (to !== null && typeof to !== "string") {
    throw new MalformedFrame("to must be a string");
  }
  const payload = obj.payload ?? {};
  if (typeof payload !== "object" || payload === null || Array.isArray(payload)) {
    throw new MalformedFrame("payload must be an object");
  }
  return {
    type: obj.type,
    seq: obj.seq,
    sent_at: obj.sent_at,
    ride_id: rideId,
    to: to,
    payload: payload as Record<string, unknown>,
  };
}
