/** Small DOM builders; no framework, elements are plain nodes. */

type Child = Node | string | null | undefined;
type Attrs = Record<string, string | number | boolean | EventListener | null | undefined>;

function apply(node: Element, attrs: Attrs | undefined, children: Child[]): void {
  for (const [key, value] of Object.entries(attrs ?? {})) {
    if (value == null || value === false) continue;
    if (key.startsWith("on") && typeof value === "function") {
      node.addEventListener(key.slice(2), value as EventListener);
    } else if (value === true) {
      node.setAttribute(key, "");
    } else {
      node.setAttribute(key, String(value));
    }
  }
  for (const child of children) {
    if (child == null) continue;
    node.append(child instanceof Node ? child : document.createTextNode(child));
  }
}

export function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  attrs?: Attrs,
  ...children: Child[]
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  apply(node, attrs, children);
  return node;
}

const SVG_NS = "http://www.w3.org/2000/svg";

export function svgEl<K extends keyof SVGElementTagNameMap>(
  tag: K,
  attrs?: Attrs,
  ...children: Child[]
): SVGElementTagNameMap[K] {
  const node = document.createElementNS(SVG_NS, tag);
  apply(node, attrs, children);
  return node;
}

export function clear(node: Element): void {
  while (node.firstChild) node.removeChild(node.firstChild);
}

/** Definition list from a plain object, used by popups and detail panes. */
export function propList(props: Record<string, unknown>): HTMLDListElement {
  const dl = el("dl", { class: "props" });
  for (const [key, value] of Object.entries(props)) {
    if (value == null) continue;
    const text =
      typeof value === "object" ? JSON.stringify(value) : String(value);
    dl.append(
      el("dt", {}, key),
      el("dd", { "data-prop": key }, text),
    );
  }
  return dl;
}
