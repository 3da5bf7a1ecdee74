// Event channel: one WebSocket carrying wire frames as binary messages.
// The constructor is injectable so node tests can pass the `ws` package.

import { decodeFrame, encodeFrame, Envelope } from "./frames.js";

type WebSocketLike = {
  binaryType: string;
  send(data: ArrayBuffer | Uint8Array): void;
  close(): void;
  onmessage: ((ev: { data: any }) => void) | null;
  onclose: ((ev: unknown) => void) | null;
  onerror: ((ev: unknown) => void) | null;
  onopen: ((ev: unknown) => void) | null;
};

export type WebSocketCtor = new (url: string) => WebSocketLike;

export class EventsSocket {
  private ws: WebSocketLike;
  private seq = 0;
  onEnvelope: (e: Envelope) => void = () => {};
  onClose: () => void = () => {};

  constructor(url: string, ctor?: WebSocketCtor) {
    const WS = ctor ?? ((globalThis as any).WebSocket as WebSocketCtor);
    this.ws = new WS(url);
    this.ws.binaryType = "arraybuffer";
    this.ws.onmessage = (ev) => {
      const bytes =
        ev.data instanceof ArrayBuffer ? new Uint8Array(ev.data) : new Uint8Array(ev.data.buffer ?? ev.data);
      this.onEnvelope(decodeFrame(bytes));
    };
    this.ws.onclose = () => this.onClose();
  }

  ready(): Promise<void> {
    return new Promise((resolve, reject) => {
      this.ws.onopen = () => resolve();
      this.ws.onerror = (e) => reject(e);
    });
  }

  sendLocation(lat: number, lon: number, recordedAt: number): void {
    this.seq += 1;
    const envelope: Envelope = {
      type: "location-update",
      seq: this.seq,
      sent_at: recordedAt,
      payload: { lat, lon, recorded_at: recordedAt },
    };
    this.ws.send(encodeFrame(envelope));
  }

  close(): void {
    this.ws.close();
  }
}
