// SVG campus map: the graph's bounding box maps onto a fixed viewport and
// everything drawn (edges, route, pins, car) comes from API payloads.

import { GraphPayload, LatLon } from "./api.js";

export const MAP_W = 640;
export const MAP_H = 480;
const PAD = 24;

export interface Projection {
  toXY(p: LatLon): { x: number; y: number };
  toLatLon(x: number, y: number): LatLon;
}

export function makeProjection(bbox: GraphPayload["bbox"]): Projection {
  const lonSpan = Math.max(bbox.max_lon - bbox.min_lon, 1e-9);
  const latSpan = Math.max(bbox.max_lat - bbox.min_lat, 1e-9);
  const sx = (MAP_W - 2 * PAD) / lonSpan;
  const sy = (MAP_H - 2 * PAD) / latSpan;
  return {
    toXY(p: LatLon) {
      return {
        x: PAD + (p.lon - bbox.min_lon) * sx,
        y: MAP_H - PAD - (p.lat - bbox.min_lat) * sy, // north is up
      };
    },
    toLatLon(x: number, y: number) {
      return {
        lon: bbox.min_lon + (x - PAD) / sx,
        lat: bbox.min_lat + (MAP_H - PAD - y) / sy,
      };
    },
  };
}

export function polylinePoints(proj: Projection, line: LatLon[]): string {
  return line
    .map((p) => {
      const { x, y } = proj.toXY(p);
      return `${x.toFixed(1)},${y.toFixed(1)}`;
    })
    .join(" ");
}

const SVG_NS = "http://www.w3.org/2000/svg";

export interface MapElements {
  svg: SVGSVGElement;
  route: SVGPolylineElement;
  pickupPin: SVGCircleElement;
  dropoffPin: SVGCircleElement;
  car: SVGCircleElement;
  proj: Projection;
}

export function renderMap(doc: Document, graph: GraphPayload): MapElements {
  const proj = makeProjection(graph.bbox);
  const svg = doc.createElementNS(SVG_NS, "svg") as SVGSVGElement;
  svg.setAttribute("viewBox", `0 0 ${MAP_W} ${MAP_H}`);
  svg.setAttribute("class", "map");

  const nodesById = new Map(graph.nodes.map((n) => [n.id, n]));
  for (const edge of graph.edges) {
    const a = nodesById.get(edge.from);
    const b = nodesById.get(edge.to);
    if (!a || !b) continue;
    const pa = proj.toXY(a);
    const pb = proj.toXY(b);
    const line = doc.createElementNS(SVG_NS, "line");
    line.setAttribute("x1", pa.x.toFixed(1));
    line.setAttribute("y1", pa.y.toFixed(1));
    line.setAttribute("x2", pb.x.toFixed(1));
    line.setAttribute("y2", pb.y.toFixed(1));
    line.setAttribute("class", "road");
    svg.appendChild(line);
  }

  const route = doc.createElementNS(SVG_NS, "polyline") as SVGPolylineElement;
  route.setAttribute("class", "route");
  route.setAttribute("points", "");
  svg.appendChild(route);

  const mkPin = (cls: string) => {
    const c = doc.createElementNS(SVG_NS, "circle") as SVGCircleElement;
    c.setAttribute("r", "7");
    c.setAttribute("class", cls);
    c.setAttribute("visibility", "hidden");
    svg.appendChild(c);
    return c;
  };
  const pickupPin = mkPin("pin pickup");
  const dropoffPin = mkPin("pin dropoff");
  const car = mkPin("car");

  return { svg, route, pickupPin, dropoffPin, car, proj };
}

export function placePin(el: SVGCircleElement, proj: Projection, p: LatLon | null): void {
  if (!p) {
    el.setAttribute("visibility", "hidden");
    return;
  }
  const { x, y } = proj.toXY(p);
  el.setAttribute("cx", x.toFixed(1));
  el.setAttribute("cy", y.toFixed(1));
  el.setAttribute("visibility", "visible");
}

export function drawRoute(el: SVGPolylineElement, proj: Projection, line: LatLon[] | null): void {
  el.setAttribute("points", line ? polylinePoints(proj, line) : "");
}
