/** Layered DAG layout for the model graph.
 *
 * Nodes go into layers by longest path from the roots, then each layer is
 * ordered by the barycenter of its parents to keep edges short. Output is
 * plain coordinates; rendering is elsewhere. */

import type { ModelDocument } from "./api.js";

export interface NodePosition {
  id: string;
  x: number;
  y: number;
  layer: number;
}

export interface LayoutOptions {
  columnWidth?: number;
  rowHeight?: number;
  marginX?: number;
  marginY?: number;
}

export interface GraphLayout {
  positions: Map<string, NodePosition>;
  width: number;
  height: number;
}

export function layoutModel(document: ModelDocument, options: LayoutOptions = {}): GraphLayout {
  const columnWidth = options.columnWidth ?? 150;
  const rowHeight = options.rowHeight ?? 72;
  const marginX = options.marginX ?? 70;
  const marginY = options.marginY ?? 46;

  const ids = document.nodes.map((n) => n.id);
  const parents = new Map<string, string[]>(ids.map((id) => [id, []]));
  const children = new Map<string, string[]>(ids.map((id) => [id, []]));
  for (const [parent, child] of document.edges) {
    parents.get(child)?.push(parent);
    children.get(parent)?.push(child);
  }

  // longest-path layering via repeated relaxation (graphs are small DAGs)
  const layer = new Map<string, number>(ids.map((id) => [id, 0]));
  for (let pass = 0; pass < ids.length; pass++) {
    let changed = false;
    for (const [parent, child] of document.edges) {
      const proposed = (layer.get(parent) ?? 0) + 1;
      if (proposed > (layer.get(child) ?? 0)) {
        layer.set(child, proposed);
        changed = true;
      }
    }
    if (!changed) break;
  }

  const layers = new Map<number, string[]>();
  for (const id of ids) {
    const l = layer.get(id) ?? 0;
    if (!layers.has(l)) layers.set(l, []);
    layers.get(l)!.push(id);
  }

  // order within each layer by mean parent position in the previous layer
  const order = new Map<string, number>();
  const layerKeys = [...layers.keys()].sort((a, b) => a - b);
  for (const key of layerKeys) {
    const members = layers.get(key)!;
    const scored = members.map((id) => {
      const ps = parents.get(id) ?? [];
      const positions = ps.map((p) => order.get(p)).filter((v): v is number => v !== undefined);
      const barycenter = positions.length
        ? positions.reduce((a, b) => a + b, 0) / positions.length
        : members.indexOf(id);
      return { id, barycenter };
    });
    scored.sort((a, b) => a.barycenter - b.barycenter || a.id.localeCompare(b.id));
    scored.forEach(({ id }, index) => order.set(id, index));
    layers.set(
      key,
      scored.map(({ id }) => id),
    );
  }

  const maxRows = Math.max(...[...layers.values()].map((m) => m.length));
  const positions = new Map<string, NodePosition>();
  for (const key of layerKeys) {
    const members = layers.get(key)!;
    const offset = (maxRows - members.length) / 2;
    members.forEach((id, row) => {
      positions.set(id, {
        id,
        layer: key,
        x: marginX + key * columnWidth,
        y: marginY + (row + offset) * rowHeight,
      });
    });
  }

  return {
    positions,
    width: marginX * 2 + (layerKeys.length - 1) * columnWidth,
    height: marginY * 2 + (maxRows - 1) * rowHeight,
  };
}
